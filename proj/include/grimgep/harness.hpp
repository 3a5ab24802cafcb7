#pragma once

#include <array>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "grimgep/config.hpp"
#include "grimgep/env.hpp"
#include "grimgep/gmm.hpp"
#include "grimgep/learner.hpp"
#include "grimgep/novelty.hpp"
#include "grimgep/regions.hpp"
#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"
#include "grimgep/stats.hpp"

namespace grimgep {

enum class GoalCategory : int { StartRoom = 0, ObjectRoom = 1, TvOn = 2, TvOff = 3 };

inline constexpr std::array<const char*, 4> kCategoryNames = {"start_room", "object_room",
                                                              "tv_on", "tv_off"};

inline GoalCategory categorize_goal(const EnvState& goal) {
  switch (goal.room) {
    case Room::Start:
      return GoalCategory::StartRoom;
    case Room::Object:
      return GoalCategory::ObjectRoom;
    case Room::Tv:
      return goal.tv_on ? GoalCategory::TvOn : GoalCategory::TvOff;
  }
  return GoalCategory::StartRoom;
}

struct EpochMetrics {
  int epoch = 0;
  double mean_success = 0.0;
  double mean_f1 = 0.0;
  std::array<double, 4> goal_fraction{};      // this epoch's goals, kCategoryNames order
  std::array<double, 4> cum_goal_fraction{};  // all goals sampled so far
  int buffer_size = 0;
  int n_clusters = 0;              // 0 while the wrapper is inactive
  std::vector<double> alps;        // per-cluster estimates, empty while inactive
};

struct RunResult {
  std::uint64_t fingerprint = 0;
  ExperimentConfig config;
  std::vector<EpochMetrics> epochs;
  double wall_seconds = 0.0;
};

// Introspection hook fired each epoch right before the goal draws; used by
// tests to check that ablation branches agree up to the cluster draw.
struct EpochDebug {
  int epoch = 0;
  std::int64_t buffer_size = 0;
  double imgep_checksum = 0.0;  // sum of i * p_i over the strategy distribution
  int gmm_k = 0;
  double gmm_log_likelihood = 0.0;
  std::int64_t record_count = 0;  // performance records accumulated so far
  std::vector<double> alps;
  // diagnostics: per goal category, the buffer share and the probability mass
  // the strategy distribution puts on it
  std::array<double, 4> category_buffer_share{};
  std::array<double, 4> category_imgep_mass{};
  // per cluster (when the wrapper is active): member count and tv-on share
  std::vector<std::int64_t> cluster_sizes;
  std::vector<double> cluster_tv_share;
};
using EpochObserver = std::function<void(const EpochDebug&)>;

namespace detail {

// Per-epoch embedding table keyed by render key: duplicate observations share
// one embedding. Downsampled features are rendered once per key lifetime and
// cached (as floats) across epochs; each rebuild re-projects every live key
// through the freshly fitted embedding and sweeps out keys that vanished with
// buffer eviction.
class LatentTable {
 public:
  void rebuild(const Environment& env, const PcaModel& pca, const ReplayBuffer& buffer,
               std::span<const std::pair<EnvState, EnvState>> history_states) {
    d_ = pca.latent_dim;
    feature_dim_ = pca.input_dim;
    ++mark_;
    slot_features_.clear();
    state_slot_.assign(static_cast<std::size_t>(buffer.size()), 0);
    record_slots_.assign(history_states.size(), {0, 0});
    for (std::int64_t i = 0; i < buffer.size(); ++i) {
      state_slot_[static_cast<std::size_t>(i)] =
          intern(env, buffer.render_key_of(i), buffer.state(i));
    }
    for (std::size_t r = 0; r < history_states.size(); ++r) {
      record_slots_[r].first =
          intern(env, env.render_key(history_states[r].first), history_states[r].first);
      record_slots_[r].second =
          intern(env, env.render_key(history_states[r].second), history_states[r].second);
    }
    sweep();
    project(pca);
  }

  int dim() const { return d_; }
  std::size_t slot_count() const { return slot_features_.size(); }
  std::uint32_t slot_of_state(std::int64_t index) const {
    return state_slot_[static_cast<std::size_t>(index)];
  }
  std::pair<std::uint32_t, std::uint32_t> slots_of_record(std::size_t r) const {
    return record_slots_[r];
  }
  const double* latent_of_slot(std::uint32_t slot) const {
    return latents_.data() + static_cast<std::size_t>(slot) * d_;
  }
  const double* latent_of_state(std::int64_t index) const {
    return latent_of_slot(slot_of_state(index));
  }

 private:
  struct CacheEntry {
    std::uint32_t feature_index = 0;
    std::uint32_t last_mark = 0;
    std::uint32_t slot = 0;
  };

  std::uint32_t intern(const Environment& env, std::uint64_t key, const EnvState& state) {
    auto [it, inserted] = cache_.try_emplace(key);
    CacheEntry& entry = it->second;
    if (inserted) {
      if (free_features_.empty()) {
        entry.feature_index = static_cast<std::uint32_t>(features_.size() / feature_dim_);
        features_.resize(features_.size() + feature_dim_);
      } else {
        entry.feature_index = free_features_.back();
        free_features_.pop_back();
      }
      std::vector<double> f = env.render_downsampled(state);
      float* dst = features_.data() + static_cast<std::size_t>(entry.feature_index) * feature_dim_;
      for (int i = 0; i < feature_dim_; ++i) dst[i] = static_cast<float>(f[i]);
    }
    if (entry.last_mark != mark_) {
      entry.last_mark = mark_;
      entry.slot = static_cast<std::uint32_t>(slot_features_.size());
      slot_features_.push_back(entry.feature_index);
    }
    return entry.slot;
  }

  void sweep() {
    for (auto it = cache_.begin(); it != cache_.end();) {
      if (it->second.last_mark != mark_) {
        free_features_.push_back(it->second.feature_index);
        it = cache_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void project(const PcaModel& pca) {
    latents_.resize(slot_features_.size() * static_cast<std::size_t>(d_));
    // embed = components . f - components . mean; the second term is shared
    // across slots, and the transposed component layout turns the feature
    // sweep into unit-stride multiply-accumulates.
    std::vector<double> offsets(d_);
    std::vector<double> comp_t(static_cast<std::size_t>(feature_dim_) * d_);
    for (int j = 0; j < d_; ++j) {
      const double* row = pca.components.data() + static_cast<std::size_t>(j) * feature_dim_;
      offsets[j] = representation_dot(row, pca.mean.data(), feature_dim_);
      for (int i = 0; i < feature_dim_; ++i) {
        comp_t[static_cast<std::size_t>(i) * d_ + j] = row[i];
      }
    }
    if (d_ == 8) {
      for (std::size_t s = 0; s < slot_features_.size(); ++s) {
        const float* f =
            features_.data() + static_cast<std::size_t>(slot_features_[s]) * feature_dim_;
        double* out = latents_.data() + s * 8;
        double a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0, a5 = 0, a6 = 0, a7 = 0;
        const double* ct = comp_t.data();
        for (int i = 0; i < feature_dim_; ++i, ct += 8) {
          const double fi = static_cast<double>(f[i]);
          a0 += ct[0] * fi;
          a1 += ct[1] * fi;
          a2 += ct[2] * fi;
          a3 += ct[3] * fi;
          a4 += ct[4] * fi;
          a5 += ct[5] * fi;
          a6 += ct[6] * fi;
          a7 += ct[7] * fi;
        }
        out[0] = a0 - offsets[0];
        out[1] = a1 - offsets[1];
        out[2] = a2 - offsets[2];
        out[3] = a3 - offsets[3];
        out[4] = a4 - offsets[4];
        out[5] = a5 - offsets[5];
        out[6] = a6 - offsets[6];
        out[7] = a7 - offsets[7];
      }
      return;
    }
    std::vector<double> acc(d_);
    for (std::size_t s = 0; s < slot_features_.size(); ++s) {
      const float* f = features_.data() + static_cast<std::size_t>(slot_features_[s]) * feature_dim_;
      double* out = latents_.data() + s * static_cast<std::size_t>(d_);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int i = 0; i < feature_dim_; ++i) {
        const double fi = static_cast<double>(f[i]);
        const double* ct = comp_t.data() + static_cast<std::size_t>(i) * d_;
        for (int j = 0; j < d_; ++j) acc[j] += ct[j] * fi;
      }
      for (int j = 0; j < d_; ++j) out[j] = acc[j] - offsets[j];
    }
  }

  static double representation_dot(const double* a, const double* b, int n) {
    return grimgep::detail::dot4(a, b, static_cast<std::size_t>(n));
  }

  int d_ = 0;
  int feature_dim_ = 0;
  std::uint32_t mark_ = 0;
  std::unordered_map<std::uint64_t, CacheEntry> cache_;
  std::vector<float> features_;             // feature_index-major arena
  std::vector<std::uint32_t> free_features_;
  std::vector<std::uint32_t> slot_features_;  // slot -> feature index
  std::vector<double> latents_;               // slot-major
  std::vector<std::uint32_t> state_slot_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> record_slots_;
};

// Log KDE density of every slot latent, evaluated with a min-shifted sum and
// a cutoff on kernels more than e^-46 below the nearest support point.
inline void bulk_log_density(const double* slot_latents, std::size_t n_slots, int d,
                             const DensityModel& kde, std::vector<double>& out) {
  out.resize(n_slots);
  const int m = kde.count;
  const double inv2h2 = 1.0 / (2.0 * kde.bandwidth * kde.bandwidth);
  const double log_norm =
      -0.5 * kde.dim * std::log(2.0 * std::numbers::pi * kde.bandwidth * kde.bandwidth) -
      std::log(static_cast<double>(m));
  std::vector<double> support_t(static_cast<std::size_t>(d) * m);  // d rows of m
  std::vector<double> base(m);                                      // ||s||^2 * c
  for (int s = 0; s < m; ++s) {
    const double* pt = kde.support.data() + static_cast<std::size_t>(s) * d;
    base[s] = dot4(pt, pt, static_cast<std::size_t>(d)) * inv2h2;
    for (int j = 0; j < d; ++j) support_t[static_cast<std::size_t>(j) * m + s] = pt[j] * inv2h2;
  }
  std::vector<double> z(m);
  for (std::size_t i = 0; i < n_slots; ++i) {
    const double* x = slot_latents + i * static_cast<std::size_t>(d);
    double x2c = dot4(x, x, static_cast<std::size_t>(d)) * inv2h2;
    for (int s = 0; s < m; ++s) z[s] = x2c + base[s];
    for (int j = 0; j < d; ++j) {
      const double xj2 = 2.0 * x[j];
      const double* st = support_t.data() + static_cast<std::size_t>(j) * m;
      for (int s = 0; s < m; ++s) z[s] -= xj2 * st[s];
    }
    double m0 = std::numeric_limits<double>::infinity(), m1 = m0, m2 = m0, m3 = m0;
    int s = 0;
    for (; s + 4 <= m; s += 4) {
      m0 = std::min(m0, z[s]);
      m1 = std::min(m1, z[s + 1]);
      m2 = std::min(m2, z[s + 2]);
      m3 = std::min(m3, z[s + 3]);
    }
    for (; s < m; ++s) m0 = std::min(m0, z[s]);
    double zmin = std::max(std::min(std::min(m0, m1), std::min(m2, m3)), 0.0);
    // Branchless clamped sum: terms more than e^-46 below the closest kernel
    // contribute nothing at double precision (the closest contributes 1).
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int t = 0;
    for (; t + 4 <= m; t += 4) {
      s0 += fast_exp_negative(-std::min(z[t] - zmin, 46.25));
      s1 += fast_exp_negative(-std::min(z[t + 1] - zmin, 46.25));
      s2 += fast_exp_negative(-std::min(z[t + 2] - zmin, 46.25));
      s3 += fast_exp_negative(-std::min(z[t + 3] - zmin, 46.25));
    }
    for (; t < m; ++t) s0 += fast_exp_negative(-std::min(z[t] - zmin, 46.25));
    double sum = (s0 + s1) + (s2 + s3);
    out[i] = std::log(sum) - zmin + log_norm;
  }
}

inline std::vector<std::int64_t> uniform_sample_indices(std::int64_t n, std::int64_t cap,
                                                        Rng& rng) {
  std::vector<std::int64_t> out;
  if (n <= cap) {
    out.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = i;
    return out;
  }
  // Floyd's sample without replacement, returned in ascending order.
  std::vector<std::int64_t> picked;
  picked.reserve(static_cast<std::size_t>(cap));
  std::unordered_map<std::int64_t, bool> taken;
  for (std::int64_t j = n - cap; j < n; ++j) {
    std::int64_t t = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(j + 1)));
    if (taken.count(t)) t = j;
    taken[t] = true;
    picked.push_back(t);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace detail

// The full exploration experiment: warmup, the per-epoch goal-sampling loop
// with optional learning-progress wrapping, test-set evaluation, and metric
// logging. Deterministic given (config, seed): every random draw comes from a
// labeled stream derived from the master seed.
inline RunResult run_experiment(const ExperimentConfig& cfg, EpochObserver observer = {}) {
  validate_config(cfg);
  const auto t_start = std::chrono::steady_clock::now();

  const Environment env(env_params(cfg));
  const std::vector<GoalSpec> test_set = env.build_test_set();
  ReplayBuffer buffer(env, cfg.buffer_capacity);
  const std::uint64_t master = cfg.seed;
  const Strategy strategy = cfg.strategy == "uniform"      ? Strategy::Uniform
                            : cfg.strategy == "countbased" ? Strategy::CountBased
                                                           : Strategy::Skewfit;

  std::int64_t rollout_counter = 0;
  auto run_rollout = [&](auto&& fn) {
    Rng stream = derive_stream(master, "rollout", static_cast<std::uint64_t>(rollout_counter));
    std::uint64_t env_seed =
        derive_stream(master, "env-seed", static_cast<std::uint64_t>(rollout_counter)).next_u64();
    ++rollout_counter;
    return fn(env_seed, stream);
  };

  for (int w = 0; w < cfg.n_warmup; ++w) {
    Rollout r = run_rollout([&](std::uint64_t env_seed, Rng& stream) {
      return random_rollout(env, env_seed, cfg.episode_length, stream);
    });
    buffer.record_rollout(r);
  }

  // (goal state, achieved last state) per attempted goal, stamped with epoch.
  struct CompactRecord {
    EnvState goal_state;
    EnvState last_state;
    std::int64_t epoch;
  };
  std::vector<CompactRecord> history;
  std::vector<std::pair<EnvState, EnvState>> history_states;

  auto fit_current_pca = [&](int epoch) {
    Rng stream = derive_stream(master, "fit-sample", static_cast<std::uint64_t>(epoch));
    std::vector<std::int64_t> ids =
        detail::uniform_sample_indices(buffer.size(), cfg.pca_fit_samples, stream);
    const std::size_t dim =
        static_cast<std::size_t>(cfg.image_size / 2) * (cfg.image_size / 2) * 3;
    std::vector<double> rows(ids.size() * dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::vector<double> f = env.render_downsampled(buffer.state(ids[i]));
      std::copy(f.begin(), f.end(), rows.begin() + i * dim);
    }
    return fit_pca_features(rows.data(), ids.size(), dim, cfg.d);
  };

  PcaModel pca = fit_current_pca(0);
  detail::LatentTable table;
  table.rebuild(env, pca, buffer, history_states);

  std::vector<std::int64_t> kde_support_ids;  // stable ids, refreshed per epoch

  std::array<std::int64_t, 4> cum_categories{};
  std::int64_t cum_goals = 0;

  RunResult result;
  result.config = cfg;
  result.fingerprint = config_fingerprint(cfg);
  result.epochs.reserve(cfg.n_epochs);

  for (int ep = 1; ep <= cfg.n_epochs; ++ep) {
    const std::int64_t n = buffer.size();
    const bool exploring = ep > cfg.start_exploration;
    const bool grim_active = cfg.wrap_grimgep && exploring;

    // Underlying sampler's distribution over the epoch-start buffer snapshot.
    GoalDistribution imgep = GoalDistribution::uniform(static_cast<std::size_t>(n));
    if (exploring && strategy == Strategy::CountBased) {
      std::vector<std::int64_t> counts(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) counts[static_cast<std::size_t>(i)] = buffer.count_of(i);
      imgep = count_based_distribution(counts, cfg.alpha);
    } else if (exploring && strategy == Strategy::Skewfit) {
      // Density support: a uniform sample of the buffer, so the estimate
      // covers the bulk, topped up with points drawn from the previous skewed
      // distribution so newly discovered regions register quickly.
      std::vector<std::int64_t> live_support;
      {
        Rng init = derive_stream(master, "kde-init", static_cast<std::uint64_t>(ep));
        live_support = detail::uniform_sample_indices(n, cfg.kde_support / 2, init);
      }
      for (std::int64_t id : kde_support_ids) {
        if (buffer.is_live(id)) live_support.push_back(buffer.index_of(id));
      }
      std::vector<std::vector<double>> support_latents;
      support_latents.reserve(live_support.size());
      for (std::int64_t idx : live_support) {
        const double* lat = table.latent_of_state(idx);
        support_latents.emplace_back(lat, lat + table.dim());
      }
      Rng kde_stream = derive_stream(master, "kde-fit", static_cast<std::uint64_t>(ep));
      DensityModel kde = fit_density(support_latents, cfg.kde_bandwidth,
                                     static_cast<std::size_t>(cfg.kde_support), kde_stream);
      std::vector<double> slot_logd;
      detail::bulk_log_density(table.latent_of_slot(0), table.slot_count(), table.dim(), kde,
                               slot_logd);
      std::vector<double> log_dens(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        log_dens[static_cast<std::size_t>(i)] = slot_logd[table.slot_of_state(i)];
      }
      imgep = skewfit_distribution_log(log_dens, cfg.alpha);
      // Refresh the skewed half of the support from today's distribution.
      Rng resample = derive_stream(master, "kde-resample", static_cast<std::uint64_t>(ep));
      kde_support_ids.clear();
      for (int s = 0; s < cfg.kde_support / 2; ++s) {
        kde_support_ids.push_back(
            buffer.id_of(static_cast<std::int64_t>(sample_index(imgep, resample))));
      }
    }

    // Wrapper state for this epoch: refit clustering, recompute performances,
    // estimate per-cluster progress once; the per-goal draws share it.
    GmmModel gmm;
    std::vector<int> assignments;
    std::vector<double> alps;
    if (grim_active) {
      // Clusters live in the top-cluster_d principal subspace (nested inside
      // the reward embedding), a coarser view that groups distractor frames
      // together instead of spreading them across the mixture.
      const int cd = cfg.cluster_d;
      Rng sample_stream = derive_stream(master, "cluster-sample", static_cast<std::uint64_t>(ep));
      std::vector<std::int64_t> ids =
          detail::uniform_sample_indices(n, cfg.cluster_fit_samples, sample_stream);
      std::vector<double> latents(ids.size() * static_cast<std::size_t>(cd));
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* lat = table.latent_of_state(ids[i]);
        std::copy(lat, lat + cd, latents.begin() + i * static_cast<std::size_t>(cd));
      }
      Rng em_stream = derive_stream(master, "em", static_cast<std::uint64_t>(ep));
      GmmFitOptions opts;
      opts.eps_reg = cfg.epsilon_reg;
      gmm = select_gmm_by_aic(latents.data(), ids.size(), cd, cfg.candidate_ks, em_stream, opts);

      GmmScorer scorer(gmm);
      std::vector<int> slot_cluster(table.slot_count());
      for (std::size_t s = 0; s < table.slot_count(); ++s) {
        slot_cluster[s] = scorer.assign(table.latent_of_slot(static_cast<std::uint32_t>(s)));
      }
      assignments.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        assignments[static_cast<std::size_t>(i)] = slot_cluster[table.slot_of_state(i)];
      }
      std::vector<RecordEval> evals;
      evals.reserve(history.size());
      for (std::size_t r = 0; r < history.size(); ++r) {
        auto [goal_slot, last_slot] = table.slots_of_record(r);
        RecordEval e;
        e.cluster = slot_cluster[goal_slot];
        e.epoch = history[r].epoch;
        e.performance = reward(
            std::span<const double>(table.latent_of_slot(goal_slot),
                                    static_cast<std::size_t>(table.dim())),
            std::span<const double>(table.latent_of_slot(last_slot),
                                    static_cast<std::size_t>(table.dim())));
        evals.push_back(e);
      }
      ClusterHistory chist = build_cluster_history(evals, gmm.k, cfg.l);
      alps = cluster_alps(chist);
    }

    if (observer) {
      EpochDebug dbg;
      dbg.epoch = ep;
      dbg.buffer_size = n;
      double checksum = 0.0;
      for (std::size_t i = 0; i < imgep.probs.size(); ++i) {
        checksum += static_cast<double>(i + 1) * imgep.probs[i];
      }
      dbg.imgep_checksum = checksum;
      dbg.gmm_k = grim_active ? gmm.k : 0;
      dbg.gmm_log_likelihood = grim_active ? gmm.log_likelihood : 0.0;
      dbg.record_count = static_cast<std::int64_t>(history.size());
      dbg.alps = alps;
      for (std::int64_t i = 0; i < n; ++i) {
        int cat = static_cast<int>(categorize_goal(buffer.state(i)));
        dbg.category_buffer_share[cat] += 1.0 / static_cast<double>(n);
        dbg.category_imgep_mass[cat] += imgep.probs[static_cast<std::size_t>(i)];
      }
      if (grim_active) {
        dbg.cluster_sizes.assign(gmm.k, 0);
        dbg.cluster_tv_share.assign(gmm.k, 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
          int c = assignments[static_cast<std::size_t>(i)];
          dbg.cluster_sizes[c]++;
          if (buffer.state(i).room == Room::Tv && buffer.state(i).tv_on) {
            dbg.cluster_tv_share[c] += 1.0;
          }
        }
        for (int c = 0; c < gmm.k; ++c) {
          if (dbg.cluster_sizes[c] > 0) dbg.cluster_tv_share[c] /= dbg.cluster_sizes[c];
        }
      }
      observer(dbg);
    }

    // Goal draws and rollouts against the epoch-start snapshot; appends wait
    // until every rollout of the epoch has finished.
    std::array<std::int64_t, 4> epoch_categories{};
    std::vector<Rollout> pending_rollouts;
    std::vector<CompactRecord> pending_records;
    pending_rollouts.reserve(cfg.goals_per_epoch);
    for (int j = 0; j < cfg.goals_per_epoch; ++j) {
      GoalDistribution draw_dist = imgep;
      if (grim_active) {
        Rng bandit = derive_stream(master, "bandit", static_cast<std::uint64_t>(ep),
                                   static_cast<std::uint64_t>(j));
        std::optional<GoalDistribution> prior;
        for (int attempt = 0; attempt < gmm.k; ++attempt) {
          int cluster = cfg.cluster_sampling == "alp"
                            ? sample_cluster(alps, cfg.T, bandit)
                            : static_cast<int>(bandit.below(static_cast<std::uint64_t>(gmm.k)));
          try {
            prior = build_prior(cluster, assignments);
            break;
          } catch (const std::runtime_error&) {
            continue;  // empty cluster in the buffer, resample
          }
        }
        if (!prior) prior = GoalDistribution::uniform(static_cast<std::size_t>(n));
        try {
          draw_dist = combine(*prior, imgep);
        } catch (const std::runtime_error&) {
          draw_dist = *prior;  // disjoint supports: fall back to the prior
        }
      }
      Rng goal_stream = derive_stream(master, "goal-draw", static_cast<std::uint64_t>(ep),
                                      static_cast<std::uint64_t>(j));
      std::int64_t goal_index = static_cast<std::int64_t>(sample_index(draw_dist, goal_stream));
      const EnvState goal_state = buffer.state(goal_index);
      epoch_categories[static_cast<int>(categorize_goal(goal_state))]++;

      const double* goal_latent = table.latent_of_state(goal_index);
      Rollout rollout = run_rollout([&](std::uint64_t, Rng& stream) {
        return reach_with_latents(
            buffer, env,
            std::span<const double>(goal_latent, static_cast<std::size_t>(table.dim())),
            [&](std::int64_t i) { return table.latent_of_state(i); }, cfg.episode_length, stream);
      });
      rollout.goal_id = buffer.id_of(goal_index);
      pending_records.push_back({goal_state, rollout.states.back(), ep});
      pending_rollouts.push_back(std::move(rollout));
    }

    for (const Rollout& r : pending_rollouts) buffer.record_rollout(r);
    for (const CompactRecord& rec : pending_records) {
      history.push_back(rec);
      history_states.push_back({rec.goal_state, rec.last_state});
    }

    // Refit the representation on the grown buffer, then evaluate with it.
    pca = fit_current_pca(ep);
    table.rebuild(env, pca, buffer, history_states);

    double success_sum = 0.0;
    double f1_sum = 0.0;
    for (std::size_t t = 0; t < test_set.size(); ++t) {
      std::vector<double> goal_latent = embed(pca, test_set[t].image);
      Rng eval_stream = derive_stream(master, "eval", static_cast<std::uint64_t>(ep),
                                      static_cast<std::uint64_t>(t));
      Rollout rollout = reach_with_latents(
          buffer, env, goal_latent, [&](std::int64_t i) { return table.latent_of_state(i); },
          cfg.episode_length, eval_stream);
      const EnvState& final_state = rollout.states.back();
      success_sum += env.evaluate_success(test_set[t], final_state) ? 1.0 : 0.0;
      f1_sum += Environment::f1_visible(env.goal_state(test_set[t]), final_state);
    }

    EpochMetrics metrics;
    metrics.epoch = ep;
    metrics.mean_success = success_sum / static_cast<double>(test_set.size());
    metrics.mean_f1 = f1_sum / static_cast<double>(test_set.size());
    for (int c = 0; c < 4; ++c) {
      metrics.goal_fraction[c] =
          static_cast<double>(epoch_categories[c]) / static_cast<double>(cfg.goals_per_epoch);
      cum_categories[c] += epoch_categories[c];
    }
    cum_goals += cfg.goals_per_epoch;
    for (int c = 0; c < 4; ++c) {
      metrics.cum_goal_fraction[c] =
          static_cast<double>(cum_categories[c]) / static_cast<double>(cum_goals);
    }
    metrics.buffer_size = static_cast<int>(buffer.size());
    metrics.n_clusters = grim_active ? gmm.k : 0;
    metrics.alps = alps;
    result.epochs.push_back(std::move(metrics));
  }

  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return result;
}

// ---------------------------------------------------------------------------
// Metrics serialization. Floats use 9 significant digits so outputs are
// byte-stable and diffable.

namespace detail {

inline std::string g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {
      "seed",
      "epoch",
      "mean_success",
      "mean_f1",
      "frac_start_room",
      "frac_object_room",
      "frac_tv_on",
      "frac_tv_off",
      "cum_frac_start_room",
      "cum_frac_object_room",
      "cum_frac_tv_on",
      "cum_frac_tv_off",
      "buffer_size",
      "n_clusters",
      "alps",
  };
  return cols;
}

inline void write_metrics_csv(std::ostream& out, const RunResult& result) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << (i ? "," : "") << cols[i];
  }
  out << '\n';
  for (const EpochMetrics& m : result.epochs) {
    out << result.config.seed << ',' << m.epoch << ',' << detail::g9(m.mean_success) << ','
        << detail::g9(m.mean_f1);
    for (double f : m.goal_fraction) out << ',' << detail::g9(f);
    for (double f : m.cum_goal_fraction) out << ',' << detail::g9(f);
    out << ',' << m.buffer_size << ',' << m.n_clusters << ',';
    for (std::size_t i = 0; i < m.alps.size(); ++i) {
      out << (i ? ";" : "") << detail::g9(m.alps[i]);
    }
    out << '\n';
  }
}

// Parses a metrics.csv produced by write_metrics_csv back into per-epoch rows.
inline RunResult read_metrics_csv(std::istream& in) {
  RunResult result;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("metrics csv: empty file");
  std::string expected;
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) expected += (i ? "," : "") + cols[i];
  if (line != expected) throw std::runtime_error("metrics csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() == cols.size() - 1) cells.push_back("");  // empty alps column
    if (cells.size() != cols.size()) throw std::runtime_error("metrics csv: bad row");
    EpochMetrics m;
    result.config.seed = std::stoull(cells[0]);
    m.epoch = std::stoi(cells[1]);
    m.mean_success = std::stod(cells[2]);
    m.mean_f1 = std::stod(cells[3]);
    for (int c = 0; c < 4; ++c) m.goal_fraction[c] = std::stod(cells[4 + c]);
    for (int c = 0; c < 4; ++c) m.cum_goal_fraction[c] = std::stod(cells[8 + c]);
    m.buffer_size = std::stoi(cells[12]);
    m.n_clusters = std::stoi(cells[13]);
    if (!cells[14].empty()) {
      std::stringstream as(cells[14]);
      std::string tok;
      while (std::getline(as, tok, ';')) m.alps.push_back(std::stod(tok));
    }
    result.epochs.push_back(std::move(m));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Across-seed aggregation.

inline const std::vector<std::string>& aggregate_metric_names() {
  static const std::vector<std::string> names = {
      "mean_success",
      "mean_f1",
      "frac_start_room",
      "frac_object_room",
      "frac_tv_on",
      "frac_tv_off",
      "cum_frac_start_room",
      "cum_frac_object_room",
      "cum_frac_tv_on",
      "cum_frac_tv_off",
      "buffer_size",
      "n_clusters",
  };
  return names;
}

inline double metric_value(const EpochMetrics& m, std::size_t metric_index) {
  switch (metric_index) {
    case 0:
      return m.mean_success;
    case 1:
      return m.mean_f1;
    case 2:
    case 3:
    case 4:
    case 5:
      return m.goal_fraction[metric_index - 2];
    case 6:
    case 7:
    case 8:
    case 9:
      return m.cum_goal_fraction[metric_index - 6];
    case 10:
      return static_cast<double>(m.buffer_size);
    case 11:
      return static_cast<double>(m.n_clusters);
    default:
      throw std::out_of_range("metric_value");
  }
}

struct SeedAggregate {
  std::uint64_t fingerprint = 0;
  std::string label;
  int n_seeds = 0;
  std::vector<int> epochs;
  // indexed [metric][epoch]
  std::vector<std::vector<double>> mean, std_dev, std_err;
  // indexed [metric][seed]: the final-epoch value of each run
  std::vector<std::vector<double>> final_values;
};

// Per-epoch across-seed statistics for runs that share a configuration
// fingerprint (they may differ only by seed).
inline SeedAggregate aggregate_seeds(const std::vector<RunResult>& results) {
  if (results.empty()) throw std::invalid_argument("aggregate_seeds: no results");
  const std::uint64_t fp = results.front().fingerprint;
  const std::size_t n_epochs = results.front().epochs.size();
  for (const RunResult& r : results) {
    if (r.fingerprint != fp) {
      throw std::invalid_argument("aggregate_seeds: mixed configuration fingerprints");
    }
    if (r.epochs.size() != n_epochs) {
      throw std::invalid_argument("aggregate_seeds: epoch counts differ across seeds");
    }
  }
  SeedAggregate agg;
  agg.fingerprint = fp;
  agg.label = config_label(results.front().config);
  agg.n_seeds = static_cast<int>(results.size());
  agg.epochs.resize(n_epochs);
  for (std::size_t e = 0; e < n_epochs; ++e) agg.epochs[e] = results.front().epochs[e].epoch;
  const std::size_t n_metrics = aggregate_metric_names().size();
  agg.mean.assign(n_metrics, std::vector<double>(n_epochs, 0.0));
  agg.std_dev.assign(n_metrics, std::vector<double>(n_epochs, 0.0));
  agg.std_err.assign(n_metrics, std::vector<double>(n_epochs, 0.0));
  agg.final_values.assign(n_metrics, std::vector<double>(results.size(), 0.0));
  std::vector<double> values(results.size());
  for (std::size_t metric = 0; metric < n_metrics; ++metric) {
    for (std::size_t e = 0; e < n_epochs; ++e) {
      for (std::size_t s = 0; s < results.size(); ++s) {
        values[s] = metric_value(results[s].epochs[e], metric);
      }
      double m = mean_of(values);
      double sd = std::sqrt(sample_variance(values));
      agg.mean[metric][e] = m;
      agg.std_dev[metric][e] = sd;
      agg.std_err[metric][e] = sd / std::sqrt(static_cast<double>(results.size()));
      if (e + 1 == n_epochs) {
        for (std::size_t s = 0; s < results.size(); ++s) agg.final_values[metric][s] = values[s];
      }
    }
  }
  return agg;
}

// Long-format comparison table: per-epoch aggregate rows, final-epoch summary
// rows, and pairwise Welch rows between configurations.
inline void write_summary_csv(std::ostream& out, const std::vector<SeedAggregate>& groups) {
  out << "kind,config_a,config_b,epoch,metric,mean_a,std_a,stderr_a,n_a,mean_b,std_b,stderr_b,"
         "n_b,t,p\n";
  const auto& names = aggregate_metric_names();
  for (const SeedAggregate& g : groups) {
    for (std::size_t metric = 0; metric < names.size(); ++metric) {
      for (std::size_t e = 0; e < g.epochs.size(); ++e) {
        out << "epoch," << g.label << ",," << g.epochs[e] << ',' << names[metric] << ','
            << detail::g9(g.mean[metric][e]) << ',' << detail::g9(g.std_dev[metric][e]) << ','
            << detail::g9(g.std_err[metric][e]) << ',' << g.n_seeds << ",,,,,,\n";
      }
      std::size_t last = g.epochs.size() - 1;
      out << "final," << g.label << ",," << g.epochs[last] << ',' << names[metric] << ','
          << detail::g9(g.mean[metric][last]) << ',' << detail::g9(g.std_dev[metric][last]) << ','
          << detail::g9(g.std_err[metric][last]) << ',' << g.n_seeds << ",,,,,,\n";
    }
  }
  static const std::vector<std::string> welch_metrics = {
      "mean_success", "mean_f1",        "cum_frac_start_room", "cum_frac_object_room",
      "cum_frac_tv_on", "cum_frac_tv_off"};
  for (std::size_t a = 0; a < groups.size(); ++a) {
    for (std::size_t b = a + 1; b < groups.size(); ++b) {
      for (const std::string& metric : welch_metrics) {
        std::size_t mi = 0;
        while (mi < names.size() && names[mi] != metric) ++mi;
        if (mi == names.size()) continue;
        const auto& va = groups[a].final_values[mi];
        const auto& vb = groups[b].final_values[mi];
        if (va.size() < 2 || vb.size() < 2) continue;
        WelchResult w = welch_t_test(va, vb);
        std::size_t last_a = groups[a].epochs.size() - 1;
        std::size_t last_b = groups[b].epochs.size() - 1;
        out << "welch," << groups[a].label << ',' << groups[b].label << ','
            << groups[a].epochs[last_a] << ',' << metric << ','
            << detail::g9(mean_of(va)) << ',' << detail::g9(std::sqrt(sample_variance(va))) << ','
            << detail::g9(std::sqrt(sample_variance(va) / va.size())) << ',' << va.size() << ','
            << detail::g9(mean_of(vb)) << ',' << detail::g9(std::sqrt(sample_variance(vb))) << ','
            << detail::g9(std::sqrt(sample_variance(vb) / vb.size())) << ',' << vb.size() << ','
            << detail::g9(w.t) << ',' << detail::g9(w.p) << '\n';
        (void)last_b;
      }
    }
  }
}

}  // namespace grimgep
