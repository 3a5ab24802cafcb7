#pragma once

#include "grimgep/config.hpp"
#include "grimgep/env.hpp"
#include "grimgep/gmm.hpp"
#include "grimgep/harness.hpp"
#include "grimgep/image.hpp"
#include "grimgep/learner.hpp"
#include "grimgep/novelty.hpp"
#include "grimgep/regions.hpp"
#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"
#include "grimgep/stats.hpp"
