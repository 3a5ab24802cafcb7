#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "grimgep/image.hpp"
#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

// Observation fingerprint for counting: 3x3 average pool, 4 quantization
// levels per channel. Coarse on purpose; it is what makes "have I seen
// something like this" answerable by a lookup table.
struct QuantKey {
  std::array<std::uint8_t, 27> cells{};  // y-major, rgb interleaved, values 0..3

  std::uint64_t packed() const {
    std::uint64_t out = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      out |= static_cast<std::uint64_t>(cells[i] & 0x3u) << (2 * i);
    }
    return out;
  }

  bool operator==(const QuantKey&) const = default;
};

inline QuantKey count_key(const Image& image) {
  QuantKey key;
  constexpr double kEps = 1e-9;
  for (int cy = 0; cy < 3; ++cy) {
    int y0 = image.height * cy / 3;
    int y1 = image.height * (cy + 1) / 3;
    for (int cx = 0; cx < 3; ++cx) {
      int x0 = image.width * cx / 3;
      int x1 = image.width * (cx + 1) / 3;
      for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) sum += image.at(y, x, c);
        double avg = sum / (static_cast<double>(y1 - y0) * (x1 - x0));
        double clipped = std::min(avg, 1.0 - kEps);
        key.cells[(static_cast<std::size_t>(cy) * 3 + cx) * 3 + c] =
            static_cast<std::uint8_t>(clipped * 4.0);
      }
    }
  }
  return key;
}

// Occurrence counts of quantized observations. Removal exists only to keep the
// table in sync with replay-buffer eviction.
class CountTable {
 public:
  std::int64_t add(std::uint64_t packed_key) {
    ++total_;
    return ++counts_[packed_key];
  }

  void remove(std::uint64_t packed_key) {
    auto it = counts_.find(packed_key);
    if (it == counts_.end()) throw std::logic_error("CountTable::remove: unknown key");
    --total_;
    if (--it->second == 0) counts_.erase(it);
  }

  std::int64_t count_of(std::uint64_t packed_key) const {
    auto it = counts_.find(packed_key);
    return it == counts_.end() ? 0 : it->second;
  }

  std::int64_t total() const { return total_; }
  std::size_t distinct() const { return counts_.size(); }

 private:
  std::unordered_map<std::uint64_t, std::int64_t> counts_;
  std::int64_t total_ = 0;
};

// count^alpha, alpha in [-1, 0]. A state that was never counted has no
// defined weight.
inline double count_weight(std::int64_t count, double alpha) {
  if (count < 1) throw std::invalid_argument("count_weight: count must be >= 1");
  return std::pow(static_cast<double>(count), alpha);
}

// p^alpha for a strictly positive density p.
inline double skew_weight(double p, double alpha) {
  if (!(p > 0.0)) throw std::invalid_argument("skew_weight: probability must be positive");
  return std::pow(p, alpha);
}

// Explicit probability vector over replay-buffer indices.
struct GoalDistribution {
  std::vector<double> probs;

  static GoalDistribution from_weights(std::vector<double> weights) {
    if (weights.empty()) throw std::invalid_argument("GoalDistribution: no weights");
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw std::invalid_argument("GoalDistribution: negative weight");
      sum += w;
    }
    if (!(sum > 0.0)) throw std::invalid_argument("GoalDistribution: zero total weight");
    for (double& w : weights) w /= sum;
    GoalDistribution d;
    d.probs = std::move(weights);
    return d;
  }

  static GoalDistribution uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("GoalDistribution: empty support");
    GoalDistribution d;
    d.probs.assign(n, 1.0 / static_cast<double>(n));
    return d;
  }

  std::size_t size() const { return probs.size(); }
};

enum class Strategy { Uniform, CountBased, Skewfit };

inline GoalDistribution count_based_distribution(std::span<const std::int64_t> per_state_counts,
                                                 double alpha) {
  std::vector<double> w(per_state_counts.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = count_weight(per_state_counts[i], alpha);
  return GoalDistribution::from_weights(std::move(w));
}

inline GoalDistribution skewfit_distribution(std::span<const double> per_state_densities,
                                             double alpha) {
  std::vector<double> w(per_state_densities.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = skew_weight(per_state_densities[i], alpha);
  return GoalDistribution::from_weights(std::move(w));
}

// Log-space variant of the above; identical result where both are
// representable, but never over/underflows on extreme densities.
inline GoalDistribution skewfit_distribution_log(std::span<const double> per_state_log_densities,
                                                 double alpha) {
  if (per_state_log_densities.empty()) {
    throw std::invalid_argument("skewfit_distribution_log: empty input");
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (double ld : per_state_log_densities) hi = std::max(hi, alpha * ld);
  std::vector<double> w(per_state_log_densities.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(alpha * per_state_log_densities[i] - hi);
  }
  return GoalDistribution::from_weights(std::move(w));
}

struct GoalSamplingContext {
  double alpha = -1.0;
  const DensityModel* density = nullptr;  // Skewfit
  const PcaModel* pca = nullptr;          // Skewfit
};

// Spec-shaped dispatcher over a replay buffer. Renders and embeds each state
// on demand, so it suits tests and small buffers; the experiment loop uses the
// kernels above against its per-epoch latent cache instead (same arithmetic).
template <class Buffer>
GoalDistribution goal_distribution(const Buffer& buffer, Strategy strategy,
                                   const GoalSamplingContext& ctx) {
  const std::int64_t n = buffer.size();
  if (n == 0) throw std::invalid_argument("goal_distribution: empty buffer");
  switch (strategy) {
    case Strategy::Uniform:
      return GoalDistribution::uniform(static_cast<std::size_t>(n));
    case Strategy::CountBased: {
      if (buffer.counts().total() == 0) {
        throw std::invalid_argument("goal_distribution: count table not populated");
      }
      std::vector<std::int64_t> counts(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) counts[i] = buffer.count_of(i);
      return count_based_distribution(counts, ctx.alpha);
    }
    case Strategy::Skewfit: {
      if (ctx.density == nullptr || ctx.pca == nullptr) {
        throw std::invalid_argument("goal_distribution: Skewfit requires fitted models");
      }
      std::vector<double> log_dens(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        std::vector<double> lat = embed(*ctx.pca, buffer.state_image(i));
        log_dens[i] = log_density(*ctx.density, lat);
      }
      return skewfit_distribution_log(log_dens, ctx.alpha);
    }
  }
  throw std::logic_error("goal_distribution: unknown strategy");
}

// Inverse-CDF draw. Zero-probability indices are never produced.
inline std::size_t sample_index(const GoalDistribution& dist, Rng& rng) {
  if (dist.probs.empty()) throw std::invalid_argument("sample_index: empty distribution");
  double u = rng.uniform();
  double cum = 0.0;
  std::size_t last_support = dist.probs.size();
  for (std::size_t i = 0; i < dist.probs.size(); ++i) {
    if (dist.probs[i] <= 0.0) continue;
    cum += dist.probs[i];
    last_support = i;
    if (u < cum) return i;
  }
  if (last_support == dist.probs.size()) {
    throw std::invalid_argument("sample_index: distribution has empty support");
  }
  return last_support;  // u landed in the rounding gap behind the final mass
}

}  // namespace grimgep
