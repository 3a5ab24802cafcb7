#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "grimgep/env.hpp"
#include "grimgep/novelty.hpp"
#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

// A finished episode before it is committed to the buffer.
struct Rollout {
  std::uint64_t env_seed = 0;
  std::vector<Action> actions;
  std::vector<EnvState> states;  // actions.size() + 1, starting at reset
  std::optional<std::int64_t> goal_id;  // stable id of the pursued goal, absent for warmup
};

// A committed episode: same content, but states referenced by stable ids.
struct Trajectory {
  std::uint64_t env_seed = 0;
  std::vector<Action> actions;
  std::vector<std::int64_t> visited;  // actions.size() + 1 stable state ids
  std::optional<std::int64_t> goal_id;
};

// Append-only store of every encountered state with FIFO eviction beyond the
// capacity. States carry their render key and quantized count key so that
// per-epoch passes never re-render history. Trajectories are kept in full
// (they are tiny) so any surviving state can be replayed from reset.
class ReplayBuffer {
 public:
  ReplayBuffer(const Environment& env, std::int64_t capacity)
      : env_(&env), capacity_(capacity) {
    if (capacity_ < 1) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
  }

  std::int64_t size() const { return static_cast<std::int64_t>(states_.size()); }
  std::int64_t capacity() const { return capacity_; }
  std::int64_t base_id() const { return base_id_; }
  std::int64_t next_id() const { return base_id_ + size(); }

  bool is_live(std::int64_t stable_id) const {
    return stable_id >= base_id_ && stable_id < next_id();
  }
  std::int64_t index_of(std::int64_t stable_id) const { return stable_id - base_id_; }
  std::int64_t id_of(std::int64_t index) const { return base_id_ + index; }

  const EnvState& state(std::int64_t index) const { return states_[check(index)].state; }
  std::uint64_t render_key_of(std::int64_t index) const { return states_[check(index)].render_key; }
  std::uint64_t quant_key_of(std::int64_t index) const { return states_[check(index)].quant_key; }
  std::int64_t count_of(std::int64_t index) const {
    return counts_.count_of(states_[check(index)].quant_key);
  }
  Image state_image(std::int64_t index) const { return env_->render(state(index)); }

  const CountTable& counts() const { return counts_; }
  const Environment& env() const { return *env_; }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }

  // (trajectory index, step within it) of a live state.
  std::pair<std::int32_t, std::int32_t> source_of(std::int64_t index) const {
    const StateRec& r = states_[check(index)];
    return {r.traj, r.step};
  }

  const Trajectory& record_rollout(const Rollout& rollout) {
    if (rollout.states.size() != rollout.actions.size() + 1) {
      throw std::invalid_argument("record_rollout: need actions + 1 states");
    }
    Trajectory traj;
    traj.env_seed = rollout.env_seed;
    traj.actions = rollout.actions;
    traj.goal_id = rollout.goal_id;
    traj.visited.reserve(rollout.states.size());
    const std::int32_t traj_index = static_cast<std::int32_t>(trajectories_.size());
    for (std::size_t step = 0; step < rollout.states.size(); ++step) {
      const EnvState& s = rollout.states[step];
      StateRec rec;
      rec.state = s;
      rec.render_key = env_->render_key(s);
      rec.quant_key = count_key(env_->render(s)).packed();
      rec.traj = traj_index;
      rec.step = static_cast<std::int32_t>(step);
      counts_.add(rec.quant_key);
      states_.push_back(rec);
      traj.visited.push_back(base_id_ + static_cast<std::int64_t>(states_.size()) - 1);
    }
    trajectories_.push_back(std::move(traj));
    evict_overflow();
    return trajectories_.back();
  }

 private:
  struct StateRec {
    EnvState state;
    std::uint64_t render_key = 0;
    std::uint64_t quant_key = 0;
    std::int32_t traj = -1;
    std::int32_t step = 0;
  };

  std::int64_t check(std::int64_t index) const {
    if (index < 0 || index >= size()) throw std::out_of_range("ReplayBuffer: bad index");
    return index;
  }

  void evict_overflow() {
    std::int64_t overflow = size() - capacity_;
    if (overflow <= 0) return;
    for (std::int64_t i = 0; i < overflow; ++i) counts_.remove(states_[i].quant_key);
    states_.erase(states_.begin(), states_.begin() + overflow);
    base_id_ += overflow;
  }

  const Environment* env_;
  std::int64_t capacity_;
  std::int64_t base_id_ = 0;
  std::vector<StateRec> states_;
  std::vector<Trajectory> trajectories_;
  CountTable counts_;
};

inline Action random_action(const EnvParams& params, Rng& rng) {
  Action a;
  a.dx = rng.uniform_in(-params.max_step, params.max_step);
  a.dy = rng.uniform_in(-params.max_step, params.max_step);
  a.grip = rng.uniform_in(-1.0, 1.0);
  return a;
}

inline Rollout random_rollout(const Environment& env, std::uint64_t env_seed,
                              int episode_length, Rng& rng) {
  Rollout r;
  r.env_seed = env_seed;
  r.states.reserve(episode_length + 1);
  r.actions.reserve(episode_length);
  EnvState s = env.reset(env_seed);
  r.states.push_back(s);
  for (int t = 0; t < episode_length; ++t) {
    Action a = random_action(env.params(), rng);
    s = env.step(s, a, rng);
    r.actions.push_back(a);
    r.states.push_back(s);
  }
  return r;
}

// Goal pursuit by trajectory replay: pick the stored state whose latent sits
// closest to the goal latent (ties toward the lowest buffer index), replay the
// action prefix that reached it from reset, then explore with random actions
// for the rest of the episode. Deterministic dynamics make the replay exact;
// only TV pattern fields can diverge, and only if the source episode had the
// distractor running.
template <class LatentAt>
Rollout reach_with_latents(const ReplayBuffer& buffer, const Environment& env,
                           std::span<const double> goal_latent, LatentAt&& latent_at,
                           int episode_length, Rng& rng) {
  const std::int64_t n = buffer.size();
  if (n == 0) throw std::invalid_argument("reach: empty buffer");
  const std::size_t d = goal_latent.size();
  std::int64_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::int64_t i = 0; i < n; ++i) {
    const double* lat = latent_at(i);
    double d2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double diff = lat[j] - goal_latent[j];
      d2 += diff * diff;
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  auto [traj_index, step] = buffer.source_of(best);
  const Trajectory& traj = buffer.trajectories()[traj_index];

  Rollout r;
  r.env_seed = traj.env_seed;
  r.states.reserve(episode_length + 1);
  r.actions.reserve(episode_length);
  EnvState s = env.reset(traj.env_seed);
  r.states.push_back(s);
  const int prefix = std::min(step, episode_length);
  for (int t = 0; t < prefix; ++t) {
    const Action& a = traj.actions[t];
    s = env.step(s, a, rng);
    r.actions.push_back(a);
    r.states.push_back(s);
  }
  for (int t = prefix; t < episode_length; ++t) {
    Action a = random_action(env.params(), rng);
    s = env.step(s, a, rng);
    r.actions.push_back(a);
    r.states.push_back(s);
  }
  return r;
}

// Spec-shaped entry point: embeds every live state under the given reward
// model. Fine for tests and small buffers; the experiment loop passes its
// cached latents through reach_with_latents instead.
inline Rollout reach(const ReplayBuffer& buffer, std::span<const double> goal_latent,
                     const PcaModel& reward_model, const Environment& env, int episode_length,
                     Rng& rng) {
  const std::int64_t n = buffer.size();
  if (n == 0) throw std::invalid_argument("reach: empty buffer");
  std::vector<double> latents(static_cast<std::size_t>(n) * reward_model.latent_dim);
  std::vector<double> features;
  for (std::int64_t i = 0; i < n; ++i) {
    features = env.render_downsampled(buffer.state(i));
    embed_features(reward_model, features.data(),
                   latents.data() + static_cast<std::size_t>(i) * reward_model.latent_dim);
  }
  const int d = reward_model.latent_dim;
  return reach_with_latents(
      buffer, env, goal_latent,
      [&](std::int64_t i) { return latents.data() + static_cast<std::size_t>(i) * d; },
      episode_length, rng);
}

}  // namespace grimgep
