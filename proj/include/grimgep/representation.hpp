#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <bit>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "grimgep/image.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

namespace detail {

// Dot product with four independent accumulators. The explicit reassociation
// is what lets the compiler vectorize the reduction at -O3 without fast-math;
// the summation order is fixed, so results stay bit-deterministic.
inline double dot4(const double* a, const double* b, std::size_t n) {
  double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += a[i] * b[i];
    acc1 += a[i + 1] * b[i + 1];
    acc2 += a[i + 2] * b[i + 2];
    acc3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) acc0 += a[i] * b[i];
  return (acc0 + acc1) + (acc2 + acc3);
}

// Dot product of two 8-vectors, pairwise-summed.
inline double dot8(const double* a, const double* b) {
  return ((a[0] * b[0] + a[1] * b[1]) + (a[2] * b[2] + a[3] * b[3])) +
         ((a[4] * b[4] + a[5] * b[5]) + (a[6] * b[6] + a[7] * b[7]));
}

// Squared distance between two 8-vectors, pairwise-summed.
inline double dist2_8(const double* a, const double* b) {
  double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2], d3 = a[3] - b[3];
  double d4 = a[4] - b[4], d5 = a[5] - b[5], d6 = a[6] - b[6], d7 = a[7] - b[7];
  return ((d0 * d0 + d1 * d1) + (d2 * d2 + d3 * d3)) +
         ((d4 * d4 + d5 * d5) + (d6 * d6 + d7 * d7));
}

// Branch-free exp core for x in [-700, 0]: range reduction against powers of
// two plus a degree-12 polynomial, ~1 ulp. Inlines into clean loops so the
// vectorizer can chew through kernel sums.
inline double fast_exp_negative(double x) {
  constexpr double inv_ln2 = 1.4426950408889634074;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  double fk = x * inv_ln2;
  int k = static_cast<int>(fk - 0.5);  // round-to-nearest for nonpositive fk
  double r = (x - k * ln2_hi) - k * ln2_lo;
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  double scale = std::bit_cast<double>(static_cast<std::uint64_t>(1023 + k) << 52);
  return p * scale;
}

// exp(x) with ~1 ulp accuracy for x in [-700, 0], the shape every hot caller
// needs (Gaussian kernels, responsibilities); std::exp stays in the scalar
// public ops.
inline double fast_exp(double x) {
  if (x < -700.0) return 0.0;
  if (x > 700.0) return std::exp(x);
  if (x <= 0.0) return fast_exp_negative(x);
  constexpr double inv_ln2 = 1.4426950408889634074;
  constexpr double ln2_hi = 6.93147180369123816490e-01;
  constexpr double ln2_lo = 1.90821492927058770002e-10;
  double fk = x * inv_ln2;
  int k = static_cast<int>(fk + 0.5);
  double r = (x - k * ln2_hi) - k * ln2_lo;
  // Degree-12 Taylor polynomial on |r| <= ln(2)/2; truncation ~1.7e-16.
  double p = 1.0 / 479001600.0;
  p = p * r + 1.0 / 39916800.0;
  p = p * r + 1.0 / 3628800.0;
  p = p * r + 1.0 / 362880.0;
  p = p * r + 1.0 / 40320.0;
  p = p * r + 1.0 / 5040.0;
  p = p * r + 1.0 / 720.0;
  p = p * r + 1.0 / 120.0;
  p = p * r + 1.0 / 24.0;
  p = p * r + 1.0 / 6.0;
  p = p * r + 0.5;
  p = p * r + 1.0;
  p = p * r + 1.0;
  union {
    double d;
    std::uint64_t u;
  } scale;
  scale.u = static_cast<std::uint64_t>(1023 + k) << 52;
  return p * scale.d;
}

// Cyclic Jacobi eigendecomposition of a small symmetric matrix, ascending
// eigenvalues. Used on the Rayleigh-Ritz projections, never on anything big.
inline void jacobi_eigen_small(std::vector<double> a, int n, std::vector<double>& values,
                               std::vector<double>& vectors_rows) {
  vectors_rows.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) vectors_rows[static_cast<std::size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& {
    return vectors_rows[static_cast<std::size_t>(i) * n + j];
  };
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-26) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double apq = A(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int i = 0; i < n; ++i) {
          double aip = A(i, p), aiq = A(i, q);
          A(i, p) = c * aip - s * aiq;
          A(i, q) = s * aip + c * aiq;
        }
        for (int i = 0; i < n; ++i) {
          double api = A(p, i), aqi = A(q, i);
          A(p, i) = c * api - s * aqi;
          A(q, i) = s * api + c * aqi;
        }
        for (int i = 0; i < n; ++i) {
          double vpi = V(p, i), vqi = V(q, i);
          V(p, i) = c * vpi - s * vqi;
          V(q, i) = s * vpi + c * vqi;
        }
      }
    }
  }
  values.resize(n);
  for (int i = 0; i < n; ++i) values[i] = A(i, i);
  // sort ascending, rows follow
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int i, int j) { return values[i] < values[j]; });
  std::vector<double> sv(n);
  std::vector<double> srows(vectors_rows.size());
  for (int i = 0; i < n; ++i) {
    sv[i] = values[order[i]];
    for (int j = 0; j < n; ++j)
      srows[static_cast<std::size_t>(i) * n + j] =
          vectors_rows[static_cast<std::size_t>(order[i]) * n + j];
  }
  values = std::move(sv);
  vectors_rows = std::move(srows);
}

}  // namespace detail

// Frozen linear embedding: x -> components * (x - mean). Rows of `components`
// are orthonormal principal directions of the training sample, largest
// variance first. The embedding input is the observation downsampled 2x and
// flattened (see downsample2_flatten).
struct PcaModel {
  std::vector<double> mean;                // input_dim
  std::vector<double> components;          // latent_dim x input_dim, row-major
  std::vector<double> explained_variance;  // latent_dim, descending
  int latent_dim = 0;
  int input_dim = 0;
};

// Fits the top-d principal directions of pre-flattened feature rows via
// covariance + block subspace iteration with a Rayleigh-Ritz finish. Sign
// convention: the largest-magnitude entry of every component is positive, so
// refits of identical data reproduce bit-identical models.
inline PcaModel fit_pca_features(const double* rows, std::size_t n, std::size_t dim, int d) {
  if (d < 1) throw std::invalid_argument("fit_pca: latent dimension must be positive");
  if (n < static_cast<std::size_t>(d)) {
    throw std::invalid_argument("fit_pca: fewer samples than latent dimension");
  }
  if (dim < static_cast<std::size_t>(d)) {
    throw std::invalid_argument("fit_pca: latent dimension exceeds input dimension");
  }
  const int D = static_cast<int>(dim);
  PcaModel model;
  model.latent_dim = d;
  model.input_dim = D;
  model.mean.assign(dim, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const double* r = rows + s * dim;
    for (std::size_t i = 0; i < dim; ++i) model.mean[i] += r[i];
  }
  for (std::size_t i = 0; i < dim; ++i) model.mean[i] /= static_cast<double>(n);

  // Sample covariance, upper triangle then mirrored. Samples are processed in
  // blocks so each covariance row is touched once per block, not per sample.
  std::vector<double> cov(dim * dim, 0.0);
  constexpr std::size_t kBlock = 16;
  std::vector<double> centered(kBlock * dim);
  for (std::size_t s0 = 0; s0 < n; s0 += kBlock) {
    const std::size_t bs = std::min(kBlock, n - s0);
    for (std::size_t b = 0; b < bs; ++b) {
      const double* r = rows + (s0 + b) * dim;
      double* c = centered.data() + b * dim;
      for (std::size_t i = 0; i < dim; ++i) c[i] = r[i] - model.mean[i];
    }
    for (std::size_t i = 0; i < dim; ++i) {
      double* crow = cov.data() + i * dim;
      for (std::size_t b = 0; b < bs; ++b) {
        const double* c = centered.data() + b * dim;
        const double xi = c[i];
        if (xi == 0.0) continue;
        for (std::size_t j = i; j < dim; ++j) crow[j] += xi * c[j];
      }
    }
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = i; j < dim; ++j) {
      cov[i * dim + j] /= denom;
      cov[j * dim + i] = cov[i * dim + j];
    }

  const int p = std::min(D, d + 4);
  // Deterministic pseudo-random block start, independent of callers.
  std::vector<double> block(static_cast<std::size_t>(p) * dim);
  {
    Rng init(0x9c0ffeeb10c0ull);
    for (double& v : block) v = init.uniform() - 0.5;
  }
  auto orthonormalize_rows = [&](std::vector<double>& b) {
    for (int r = 0; r < p; ++r) {
      double* row = b.data() + static_cast<std::size_t>(r) * dim;
      for (int prev = 0; prev < r; ++prev) {
        const double* prow = b.data() + static_cast<std::size_t>(prev) * dim;
        double dot = detail::dot4(row, prow, dim);
        for (std::size_t i = 0; i < dim; ++i) row[i] -= dot * prow[i];
      }
      double nrm2 = detail::dot4(row, row, dim);
      if (nrm2 < 1e-24) {
        // Degenerate direction (rank-deficient data); reseed with a canonical
        // axis and re-orthogonalize so the basis stays complete.
        std::size_t axis = (static_cast<std::size_t>(r) * 7919u) % dim;
        for (std::size_t i = 0; i < dim; ++i) row[i] = (i == axis) ? 1.0 : 0.0;
        for (int prev = 0; prev < r; ++prev) {
          const double* prow = b.data() + static_cast<std::size_t>(prev) * dim;
          double dot = detail::dot4(row, prow, dim);
          for (std::size_t i = 0; i < dim; ++i) row[i] -= dot * prow[i];
        }
        nrm2 = detail::dot4(row, row, dim);
        if (nrm2 < 1e-24) continue;  // fully degenerate input, leave as zeros
      }
      double inv = 1.0 / std::sqrt(nrm2);
      for (std::size_t i = 0; i < dim; ++i) row[i] *= inv;
    }
  };
  orthonormalize_rows(block);

  std::vector<double> multiplied(block.size());
  // Covariance row i is streamed once per application; the whole block stays
  // cache-resident across the p dot products.
  auto apply_cov = [&](const std::vector<double>& in, std::vector<double>& out) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double* crow = cov.data() + i * dim;
      for (int r = 0; r < p; ++r) {
        const double* row = in.data() + static_cast<std::size_t>(r) * dim;
        out[static_cast<std::size_t>(r) * dim + i] = detail::dot4(crow, row, dim);
      }
    }
  };

  // Convergence is judged on the top-d Ritz values only; the guard rows are
  // allowed to keep rotating inside near-degenerate tails.
  std::vector<double> ritz_prev(p, std::numeric_limits<double>::infinity());
  std::vector<double> ritz(p, 0.0);
  std::vector<double> sorted(p);
  int stable_streak = 0;
  for (int iter = 0; iter < 120; ++iter) {
    apply_cov(block, multiplied);
    for (int r = 0; r < p; ++r) {
      const double* b = block.data() + static_cast<std::size_t>(r) * dim;
      const double* m = multiplied.data() + static_cast<std::size_t>(r) * dim;
      ritz[r] = detail::dot4(b, m, dim);
    }
    sorted.assign(ritz.begin(), ritz.end());
    std::sort(sorted.rbegin(), sorted.rend());
    double drift = 0.0;
    for (int r = 0; r < d; ++r) drift = std::max(drift, std::abs(sorted[r] - ritz_prev[r]));
    double scale = std::max(std::abs(sorted[0]), 1e-300);
    stable_streak = drift <= 3e-9 * scale ? stable_streak + 1 : 0;
    std::copy(sorted.begin(), sorted.end(), ritz_prev.begin());
    block.swap(multiplied);
    orthonormalize_rows(block);
    if (stable_streak >= 2 && iter >= 6) break;
  }

  // Rayleigh-Ritz rotation so near-equal eigenvalues come out cleanly.
  apply_cov(block, multiplied);
  std::vector<double> proj(static_cast<std::size_t>(p) * p, 0.0);
  for (int r = 0; r < p; ++r) {
    for (int s = r; s < p; ++s) {
      const double* br = block.data() + static_cast<std::size_t>(r) * dim;
      const double* ms = multiplied.data() + static_cast<std::size_t>(s) * dim;
      double acc = detail::dot4(br, ms, dim);
      proj[static_cast<std::size_t>(r) * p + s] = acc;
      proj[static_cast<std::size_t>(s) * p + r] = acc;
    }
  }
  std::vector<double> eigvals;
  std::vector<double> eigrows;
  detail::jacobi_eigen_small(proj, p, eigvals, eigrows);

  model.components.assign(static_cast<std::size_t>(d) * dim, 0.0);
  model.explained_variance.assign(d, 0.0);
  for (int out = 0; out < d; ++out) {
    int src = p - 1 - out;  // ascending -> take from the top
    model.explained_variance[out] = std::max(eigvals[src], 0.0);
    double* comp = model.components.data() + static_cast<std::size_t>(out) * dim;
    for (int r = 0; r < p; ++r) {
      double w = eigrows[static_cast<std::size_t>(src) * p + r];
      const double* brow = block.data() + static_cast<std::size_t>(r) * dim;
      for (std::size_t i = 0; i < dim; ++i) comp[i] += w * brow[i];
    }
    // Deterministic sign: largest-magnitude entry positive.
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double mag = std::abs(comp[i]);
      if (mag > best) {
        best = mag;
        arg = i;
      }
    }
    if (comp[arg] < 0.0) {
      for (std::size_t i = 0; i < dim; ++i) comp[i] = -comp[i];
    }
  }
  return model;
}

inline PcaModel fit_pca(const std::vector<Image>& samples, int d) {
  if (samples.empty()) throw std::invalid_argument("fit_pca: no samples");
  std::vector<double> first = downsample2_flatten(samples.front());
  const std::size_t dim = first.size();
  std::vector<double> rows;
  rows.reserve(samples.size() * dim);
  rows.insert(rows.end(), first.begin(), first.end());
  for (std::size_t s = 1; s < samples.size(); ++s) {
    std::vector<double> f = downsample2_flatten(samples[s]);
    if (f.size() != dim) throw std::invalid_argument("fit_pca: mixed image shapes");
    rows.insert(rows.end(), f.begin(), f.end());
  }
  return fit_pca_features(rows.data(), samples.size(), dim, d);
}

inline void embed_features(const PcaModel& model, const double* x, double* out) {
  for (int j = 0; j < model.latent_dim; ++j) {
    const double* row = model.components.data() + static_cast<std::size_t>(j) * model.input_dim;
    double acc = 0.0;
    for (int i = 0; i < model.input_dim; ++i) acc += row[i] * (x[i] - model.mean[i]);
    out[j] = acc;
  }
}

inline std::vector<double> embed(const PcaModel& model, const Image& image) {
  std::vector<double> f = downsample2_flatten(image);
  if (f.size() != static_cast<std::size_t>(model.input_dim)) {
    throw std::invalid_argument("embed: image dimensions do not match the fit");
  }
  std::vector<double> out(model.latent_dim);
  embed_features(model, f.data(), out.data());
  return out;
}

inline std::vector<double> reconstruct(const PcaModel& model, std::span<const double> latent) {
  if (latent.size() != static_cast<std::size_t>(model.latent_dim)) {
    throw std::invalid_argument("reconstruct: latent dimension mismatch");
  }
  std::vector<double> x(model.mean);
  for (int j = 0; j < model.latent_dim; ++j) {
    const double* row = model.components.data() + static_cast<std::size_t>(j) * model.input_dim;
    for (int i = 0; i < model.input_dim; ++i) x[i] += latent[j] * row[i];
  }
  return x;
}

// Negative Euclidean distance between two latents; 0 iff they are equal.
inline double reward(std::span<const double> goal_latent, std::span<const double> state_latent) {
  if (goal_latent.size() != state_latent.size()) {
    throw std::invalid_argument("reward: latent dimension mismatch");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < goal_latent.size(); ++i) {
    double diff = goal_latent[i] - state_latent[i];
    acc += diff * diff;
  }
  return -std::sqrt(acc);
}

// Isotropic Gaussian kernel density over a capped set of support latents.
// Stands in for a generative model's likelihood when scoring how "known" a
// state looks.
struct DensityModel {
  std::vector<double> support;  // count x dim, row-major
  int dim = 0;
  int count = 0;
  double bandwidth = 0.0;
};

inline DensityModel fit_density(const std::vector<std::vector<double>>& latents,
                                double bandwidth, std::size_t max_support, Rng& rng) {
  if (latents.empty()) throw std::invalid_argument("fit_density: empty input");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("fit_density: bandwidth must be positive");
  const std::size_t dim = latents.front().size();
  if (dim == 0) throw std::invalid_argument("fit_density: zero-dimensional latents");
  DensityModel model;
  model.dim = static_cast<int>(dim);
  model.bandwidth = bandwidth;
  std::vector<std::size_t> chosen;
  if (latents.size() <= max_support) {
    chosen.resize(latents.size());
    for (std::size_t i = 0; i < latents.size(); ++i) chosen[i] = i;
  } else {
    // Floyd's uniform sample without replacement, then input order.
    std::vector<std::uint8_t> taken(latents.size(), 0);
    for (std::size_t j = latents.size() - max_support; j < latents.size(); ++j) {
      std::size_t t = static_cast<std::size_t>(rng.below(j + 1));
      if (taken[t]) t = j;
      taken[t] = 1;
      chosen.push_back(t);
    }
    std::sort(chosen.begin(), chosen.end());
  }
  model.count = static_cast<int>(chosen.size());
  model.support.reserve(chosen.size() * dim);
  for (std::size_t idx : chosen) {
    if (latents[idx].size() != dim) {
      throw std::invalid_argument("fit_density: mixed latent dimensions");
    }
    model.support.insert(model.support.end(), latents[idx].begin(), latents[idx].end());
  }
  return model;
}

inline double density(const DensityModel& model, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(model.dim)) {
    throw std::invalid_argument("density: dimension mismatch");
  }
  const double inv2h2 = 1.0 / (2.0 * model.bandwidth * model.bandwidth);
  double sum = 0.0;
  for (int s = 0; s < model.count; ++s) {
    const double* pt = model.support.data() + static_cast<std::size_t>(s) * model.dim;
    double d2 = 0.0;
    for (int i = 0; i < model.dim; ++i) {
      double diff = x[i] - pt[i];
      d2 += diff * diff;
    }
    sum += std::exp(-d2 * inv2h2);
  }
  const double norm = std::pow(2.0 * std::numbers::pi * model.bandwidth * model.bandwidth,
                               -0.5 * model.dim);
  double value = sum * norm / model.count;
  return std::max(value, std::numeric_limits<double>::denorm_min());
}

// Same quantity as log(density(...)) but immune to underflow of distant
// probes; the bulk goal-weighting path works entirely in log space.
inline double log_density(const DensityModel& model, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(model.dim)) {
    throw std::invalid_argument("log_density: dimension mismatch");
  }
  const double inv2h2 = 1.0 / (2.0 * model.bandwidth * model.bandwidth);
  double min_d2 = std::numeric_limits<double>::infinity();
  std::vector<double> d2s(model.count);
  for (int s = 0; s < model.count; ++s) {
    const double* pt = model.support.data() + static_cast<std::size_t>(s) * model.dim;
    double d2 = 0.0;
    for (int i = 0; i < model.dim; ++i) {
      double diff = x[i] - pt[i];
      d2 += diff * diff;
    }
    d2s[s] = d2;
    min_d2 = std::min(min_d2, d2);
  }
  double sum = 0.0;
  for (int s = 0; s < model.count; ++s) {
    sum += detail::fast_exp(-(d2s[s] - min_d2) * inv2h2);
  }
  const double log_norm =
      -0.5 * model.dim * std::log(2.0 * std::numbers::pi * model.bandwidth * model.bandwidth);
  return std::log(sum) - min_d2 * inv2h2 + log_norm - std::log(static_cast<double>(model.count));
}

}  // namespace grimgep
