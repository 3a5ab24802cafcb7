#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "grimgep/gmm.hpp"
#include "grimgep/image.hpp"
#include "grimgep/novelty.hpp"
#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

// Frozen map from any image to a cluster id: project through the PCA, then
// take the mixture component with the highest responsibility.
struct ClusteringFn {
  PcaModel pca;
  GmmModel gmm;
};

inline int assign_cluster(const ClusteringFn& cl, const Image& image) {
  if (cl.gmm.dim != cl.pca.latent_dim) {
    throw std::invalid_argument("assign_cluster: mixture/embedding dimension mismatch");
  }
  std::vector<double> latent = embed(cl.pca, image);
  return gmm_assign(cl.gmm, latent.data());
}

// One attempted goal and what came of it. Performances are recomputed from
// these records every epoch under the then-current reward model.
struct PerformanceRecord {
  Image goal_image;
  Image last_state_image;
  std::int64_t epoch = 0;
};

struct ClusterHistory {
  struct Entry {
    std::int64_t epoch;
    double mean_performance;
  };
  std::vector<std::vector<Entry>> per_cluster;
};

// A record already reduced to (cluster of its goal, epoch, reward).
struct RecordEval {
  int cluster = 0;
  std::int64_t epoch = 0;
  double performance = 0.0;
};

// Groups evaluated records by cluster, averages within each epoch, and keeps
// only the most recent `history_len` epochs that actually have data. Records
// must arrive in nondecreasing epoch order.
inline ClusterHistory build_cluster_history(std::span<const RecordEval> evals, int n_clusters,
                                            int history_len) {
  ClusterHistory hist;
  hist.per_cluster.resize(n_clusters);
  std::vector<std::vector<std::pair<double, std::int64_t>>> acc(n_clusters);  // (sum, count)
  std::vector<std::vector<std::int64_t>> epochs(n_clusters);
  for (const RecordEval& e : evals) {
    if (e.cluster < 0 || e.cluster >= n_clusters) {
      throw std::invalid_argument("build_cluster_history: cluster id out of range");
    }
    auto& ep = epochs[e.cluster];
    auto& ac = acc[e.cluster];
    if (ep.empty() || ep.back() != e.epoch) {
      if (!ep.empty() && ep.back() > e.epoch) {
        throw std::invalid_argument("build_cluster_history: epochs must be nondecreasing");
      }
      ep.push_back(e.epoch);
      ac.push_back({e.performance, 1});
    } else {
      ac.back().first += e.performance;
      ac.back().second += 1;
    }
  }
  for (int c = 0; c < n_clusters; ++c) {
    std::size_t total = epochs[c].size();
    std::size_t keep = std::min<std::size_t>(total, static_cast<std::size_t>(history_len));
    std::size_t begin = total - keep;
    hist.per_cluster[c].reserve(keep);
    for (std::size_t i = begin; i < total; ++i) {
      hist.per_cluster[c].push_back(
          {epochs[c][i], acc[c][i].first / static_cast<double>(acc[c][i].second)});
    }
  }
  return hist;
}

// Recomputes each record's reward under the current model, clusters the goal,
// and builds per-cluster performance histories.
inline ClusterHistory recompute_performances(std::span<const PerformanceRecord> history,
                                             const ClusteringFn& cl,
                                             const PcaModel& reward_model, int history_len) {
  if (history.empty()) {
    throw std::invalid_argument("recompute_performances: empty history");
  }
  std::vector<RecordEval> evals;
  evals.reserve(history.size());
  for (const PerformanceRecord& rec : history) {
    std::vector<double> goal_latent = embed(reward_model, rec.goal_image);
    std::vector<double> state_latent = embed(reward_model, rec.last_state_image);
    RecordEval e;
    e.cluster = assign_cluster(cl, rec.goal_image);
    e.epoch = rec.epoch;
    e.performance = reward(goal_latent, state_latent);
    evals.push_back(e);
  }
  return build_cluster_history(evals, cl.gmm.k, history_len);
}

// Absolute learning progress of one cluster's history: the absolute gap
// between the means of the first and second halves (first half gets the floor
// on odd lengths). Histories shorter than 2 carry no signal.
inline double estimate_alp(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const std::size_t half = n / 2;
  double first = 0.0, second = 0.0;
  for (std::size_t i = 0; i < half; ++i) first += values[i];
  for (std::size_t i = half; i < n; ++i) second += values[i];
  first /= static_cast<double>(half);
  second /= static_cast<double>(n - half);
  return std::abs(first - second);
}

inline std::vector<double> cluster_alps(const ClusterHistory& hist) {
  std::vector<double> alps(hist.per_cluster.size(), 0.0);
  std::vector<double> values;
  for (std::size_t c = 0; c < hist.per_cluster.size(); ++c) {
    values.clear();
    for (const auto& entry : hist.per_cluster[c]) values.push_back(entry.mean_performance);
    alps[c] = estimate_alp(values);
  }
  return alps;
}

// Bandit over clusters: p(c) = 0.8 * alp_c^T / sum + 0.2 / C, falling back to
// uniform when every estimate is (numerically) zero. Normalizing by the max
// before the power keeps the probabilities exactly invariant to rescaling.
inline std::vector<double> cluster_probabilities(std::span<const double> alps, double T) {
  if (alps.empty()) throw std::invalid_argument("cluster_probabilities: no clusters");
  const std::size_t c = alps.size();
  double hi = 0.0;
  for (double a : alps) {
    if (!(a >= 0.0)) throw std::invalid_argument("cluster_probabilities: negative ALP");
    hi = std::max(hi, a);
  }
  std::vector<double> probs(c, 1.0 / static_cast<double>(c));
  if (hi < 1e-12) return probs;  // all-zero progress: uniform
  std::vector<double> powered(c);
  double total = 0.0;
  for (std::size_t i = 0; i < c; ++i) {
    powered[i] = std::pow(alps[i] / hi, T);
    total += powered[i];
  }
  for (std::size_t i = 0; i < c; ++i) {
    probs[i] = 0.8 * powered[i] / total + 0.2 / static_cast<double>(c);
  }
  return probs;
}

inline int sample_cluster(std::span<const double> alps, double T, Rng& rng) {
  std::vector<double> probs = cluster_probabilities(alps, T);
  double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

// Masking distribution: uniform over buffer entries assigned to the sampled
// cluster, zero elsewhere.
inline GoalDistribution build_prior(int sampled_cluster, std::span<const int> assignments) {
  if (assignments.empty()) throw std::invalid_argument("build_prior: empty buffer");
  std::int64_t members = 0;
  for (int a : assignments) {
    if (a == sampled_cluster) ++members;
  }
  if (members == 0) {
    throw std::runtime_error("build_prior: sampled cluster has no buffer members");
  }
  GoalDistribution d;
  d.probs.assign(assignments.size(), 0.0);
  const double p = 1.0 / static_cast<double>(members);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] == sampled_cluster) d.probs[i] = p;
  }
  return d;
}

// p(g) = prior(g) * imgep(g) / sum(prior * imgep): the prior masks, the
// wrapped sampler keeps its relative preferences inside the mask.
inline GoalDistribution combine(const GoalDistribution& prior, const GoalDistribution& imgep) {
  if (prior.size() != imgep.size()) {
    throw std::invalid_argument("combine: distribution lengths differ");
  }
  std::vector<double> w(prior.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = prior.probs[i] * imgep.probs[i];
    total += w[i];
  }
  if (!(total > 0.0)) {
    throw std::runtime_error("combine: supports are disjoint");
  }
  GoalDistribution d;
  d.probs = std::move(w);
  for (double& v : d.probs) v /= total;
  return d;
}

}  // namespace grimgep
