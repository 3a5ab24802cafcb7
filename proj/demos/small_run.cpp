// Minimal end-to-end example: a short wrapped run with progress printed per
// epoch. Takes a couple of minutes; shrink n_epochs for a faster look.

#include <cstdio>

#include "grimgep/grimgep.hpp"

int main() {
  grimgep::ExperimentConfig cfg;
  cfg.strategy = "countbased";
  cfg.wrap_grimgep = true;
  cfg.alpha = -1.0;
  cfg.n_epochs = 200;
  cfg.start_exploration = 50;
  cfg.n_warmup = 25;
  cfg.seed = 1;

  grimgep::RunResult result = grimgep::run_experiment(cfg, [](const grimgep::EpochDebug& dbg) {
    if (dbg.epoch % 20 == 0) {
      std::printf("epoch %4d  buffer %7lld  clusters %2d\n", dbg.epoch,
                  static_cast<long long>(dbg.buffer_size), dbg.gmm_k);
    }
  });

  const grimgep::EpochMetrics& last = result.epochs.back();
  std::printf("final success %.3f  f1 %.3f  tv-on share %.3f (%.1f s)\n", last.mean_success,
              last.mean_f1, last.cum_goal_fraction[2], result.wall_seconds);
  return 0;
}
