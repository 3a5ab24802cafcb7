#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"

namespace grimgep {

// Diagonal-covariance Gaussian mixture. Variances are floored at the fit's
// eps_reg so near-duplicate inputs cannot collapse a component.
struct GmmModel {
  int k = 0;
  int dim = 0;
  std::vector<double> weights;    // k, on the simplex
  std::vector<double> means;      // k x dim
  std::vector<double> variances;  // k x dim diagonal entries
  double log_likelihood = -std::numeric_limits<double>::infinity();  // of its training data
  std::vector<double> ll_trace;  // log-likelihood before each M step plus a final evaluation
};

struct GmmFitOptions {
  double eps_reg = 1e-6;
  double tol = 1e-6;  // stop when the mean per-point log-likelihood improves
                      // by less than this (sklearn-style convergence)
  int max_iters = 200;
};

namespace detail {

inline void gmm_component_constants(const GmmModel& m, std::vector<double>& log_const,
                                    std::vector<double>& inv_var) {
  log_const.resize(m.k);
  inv_var.resize(static_cast<std::size_t>(m.k) * m.dim);
  const double half_dim_log2pi = 0.5 * m.dim * std::log(2.0 * std::numbers::pi);
  for (int c = 0; c < m.k; ++c) {
    double log_det = 0.0;
    for (int i = 0; i < m.dim; ++i) {
      double v = m.variances[static_cast<std::size_t>(c) * m.dim + i];
      log_det += std::log(v);
      inv_var[static_cast<std::size_t>(c) * m.dim + i] = 1.0 / v;
    }
    double lw = m.weights[c] > 0.0 ? std::log(m.weights[c])
                                   : -std::numeric_limits<double>::infinity();
    log_const[c] = lw - 0.5 * log_det - half_dim_log2pi;
  }
}

inline void gmm_point_log_joint(const GmmModel& m, std::span<const double> log_const,
                                std::span<const double> inv_var, const double* x, double* out) {
  for (int c = 0; c < m.k; ++c) {
    const double* mu = m.means.data() + static_cast<std::size_t>(c) * m.dim;
    const double* iv = inv_var.data() + static_cast<std::size_t>(c) * m.dim;
    double q = 0.0;
    for (int i = 0; i < m.dim; ++i) {
      double diff = x[i] - mu[i];
      q += diff * diff * iv[i];
    }
    out[c] = log_const[c] - 0.5 * q;
  }
}

}  // namespace detail

inline double gmm_point_log_density(const GmmModel& m, const double* x) {
  std::vector<double> log_const, inv_var, lj(m.k);
  detail::gmm_component_constants(m, log_const, inv_var);
  detail::gmm_point_log_joint(m, log_const, inv_var, x, lj.data());
  double hi = *std::max_element(lj.begin(), lj.end());
  if (!std::isfinite(hi)) return hi;
  double sum = 0.0;
  for (double v : lj) sum += detail::fast_exp(v - hi);
  return hi + std::log(sum);
}

// Hard assignment by posterior responsibility; ties break toward the lowest
// component id.
inline int gmm_assign(const GmmModel& m, const double* x) {
  std::vector<double> log_const, inv_var, lj(m.k);
  detail::gmm_component_constants(m, log_const, inv_var);
  detail::gmm_point_log_joint(m, log_const, inv_var, x, lj.data());
  int best = 0;
  for (int c = 1; c < m.k; ++c) {
    if (lj[c] > lj[best]) best = c;
  }
  return best;
}

// EM fit from k-means++-style initialization (D2 seeding plus a few Lloyd
// refinement rounds, which drastically cuts the EM iterations needed).
inline GmmModel fit_gmm(const double* data, std::size_t n, int dim, int k, Rng& rng,
                        GmmFitOptions opts = {}) {
  if (k < 1) throw std::invalid_argument("fit_gmm: k must be positive");
  if (dim < 1) throw std::invalid_argument("fit_gmm: dim must be positive");
  if (n < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("fit_gmm: fewer points than components");
  }

  GmmModel m;
  m.k = k;
  m.dim = dim;
  m.weights.assign(k, 1.0 / k);
  m.means.assign(static_cast<std::size_t>(k) * dim, 0.0);
  m.variances.assign(static_cast<std::size_t>(k) * dim, 0.0);

  // k-means++ seeding: first center uniform, the rest proportional to the
  // squared distance from the nearest chosen center.
  {
    std::size_t first = static_cast<std::size_t>(rng.below(n));
    std::copy_n(data + first * dim, dim, m.means.begin());
    std::vector<double> d2(n);
    auto refresh = [&](int center_idx) {
      const double* mu = m.means.data() + static_cast<std::size_t>(center_idx) * dim;
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = data + i * dim;
        double q = 0.0;
        for (int j = 0; j < dim; ++j) {
          double diff = x[j] - mu[j];
          q += diff * diff;
        }
        d2[i] = center_idx == 0 ? q : std::min(d2[i], q);
      }
    };
    refresh(0);
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (double v : d2) total += v;
      std::size_t pick;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        double cum = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          cum += d2[i];
          if (u < cum) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<std::size_t>(rng.below(n));  // all points coincide
      }
      std::copy_n(data + pick * dim, dim, m.means.begin() + static_cast<std::size_t>(c) * dim);
      refresh(c);
    }
  }

  // Lloyd refinement of the seeds (hard assignments, ties to the lowest id).
  {
    std::vector<int> label(n, 0);
    std::vector<double> sums(static_cast<std::size_t>(k) * dim);
    std::vector<std::int64_t> counts(k);
    for (int round = 0; round < 8; ++round) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = data + i * dim;
        int best = 0;
        double best_q = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double* mu = m.means.data() + static_cast<std::size_t>(c) * dim;
          double q = 0.0;
          for (int j = 0; j < dim; ++j) {
            double diff = x[j] - mu[j];
            q += diff * diff;
          }
          if (q < best_q) {
            best_q = q;
            best = c;
          }
        }
        if (label[i] != best) changed = true;
        label[i] = best;
      }
      if (!changed && round > 0) break;
      std::fill(sums.begin(), sums.end(), 0.0);
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        const double* x = data + i * dim;
        double* s = sums.data() + static_cast<std::size_t>(label[i]) * dim;
        for (int j = 0; j < dim; ++j) s[j] += x[j];
        ++counts[label[i]];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[c] == 0) continue;  // empty cluster keeps its seed
        double* mu = m.means.data() + static_cast<std::size_t>(c) * dim;
        for (int j = 0; j < dim; ++j) mu[j] = sums[static_cast<std::size_t>(c) * dim + j] / counts[c];
      }
    }
  }

  // Initial variances: global per-dimension variance, floored.
  {
    std::vector<double> mean(dim, 0.0), sq(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = data + i * dim;
      for (int j = 0; j < dim; ++j) {
        mean[j] += x[j];
        sq[j] += x[j] * x[j];
      }
    }
    for (int j = 0; j < dim; ++j) {
      mean[j] /= static_cast<double>(n);
      double var = sq[j] / static_cast<double>(n) - mean[j] * mean[j];
      var = std::max(var, opts.eps_reg);
      for (int c = 0; c < k; ++c) m.variances[static_cast<std::size_t>(c) * dim + j] = var;
    }
  }

  // Component-major work buffer: row c holds that component's per-point log
  // joint, later overwritten by its normalized responsibilities.
  std::vector<double> work(static_cast<std::size_t>(k) * n);
  std::vector<double> lse(n);
  std::vector<double> log_const, inv_var;
  std::vector<double> acc_w(k), acc_mean(static_cast<std::size_t>(k) * dim),
      acc_sq(static_cast<std::size_t>(k) * dim);

  auto log_joint_pass = [&]() {
    detail::gmm_component_constants(m, log_const, inv_var);
    for (int c = 0; c < k; ++c) {
      const double* mu = m.means.data() + static_cast<std::size_t>(c) * dim;
      const double* iv = inv_var.data() + static_cast<std::size_t>(c) * dim;
      const double cst = log_const[c];
      double* row = work.data() + static_cast<std::size_t>(c) * n;
      if (dim == 8) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* x = data + i * 8;
          double d0 = x[0] - mu[0], d1 = x[1] - mu[1], d2 = x[2] - mu[2], d3 = x[3] - mu[3];
          double d4 = x[4] - mu[4], d5 = x[5] - mu[5], d6 = x[6] - mu[6], d7 = x[7] - mu[7];
          double q = ((d0 * d0 * iv[0] + d1 * d1 * iv[1]) + (d2 * d2 * iv[2] + d3 * d3 * iv[3])) +
                     ((d4 * d4 * iv[4] + d5 * d5 * iv[5]) + (d6 * d6 * iv[6] + d7 * d7 * iv[7]));
          row[i] = cst - 0.5 * q;
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const double* x = data + i * dim;
          double q = 0.0;
          for (int j = 0; j < dim; ++j) {
            double diff = x[j] - mu[j];
            q += diff * diff * iv[j];
          }
          row[i] = cst - 0.5 * q;
        }
      }
    }
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double hi = work[i];
      for (int c = 1; c < k; ++c) hi = std::max(hi, work[static_cast<std::size_t>(c) * n + i]);
      double sum = 0.0;
      for (int c = 0; c < k; ++c) {
        double e = detail::fast_exp(work[static_cast<std::size_t>(c) * n + i] - hi);
        work[static_cast<std::size_t>(c) * n + i] = e;
        sum += e;
      }
      lse[i] = sum;
      ll += hi + std::log(sum);
    }
    return ll;
  };

  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < opts.max_iters; ++iter) {
    double ll = log_joint_pass();
    m.ll_trace.push_back(ll);
    if (iter > 0 && (ll - prev_ll) / static_cast<double>(n) < opts.tol) break;
    prev_ll = ll;
    for (int c = 0; c < k; ++c) {
      const double* row = work.data() + static_cast<std::size_t>(c) * n;
      double nc = 0.0;
      double* am = acc_mean.data() + static_cast<std::size_t>(c) * dim;
      double* as = acc_sq.data() + static_cast<std::size_t>(c) * dim;
      std::fill(am, am + dim, 0.0);
      std::fill(as, as + dim, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double r = row[i] / lse[i];
        nc += r;
        const double* x = data + i * dim;
        for (int j = 0; j < dim; ++j) {
          am[j] += r * x[j];
          as[j] += r * x[j] * x[j];
        }
      }
      acc_w[c] = nc;
      m.weights[c] = nc / static_cast<double>(n);
      if (nc < 1e-12) continue;  // starved component keeps its parameters
      double* mu = m.means.data() + static_cast<std::size_t>(c) * dim;
      double* var = m.variances.data() + static_cast<std::size_t>(c) * dim;
      for (int j = 0; j < dim; ++j) {
        mu[j] = am[j] / nc;
        var[j] = std::max(as[j] / nc - mu[j] * mu[j], opts.eps_reg);
      }
    }
  }
  m.log_likelihood = log_joint_pass();  // of the returned parameters
  m.ll_trace.push_back(m.log_likelihood);
  return m;
}

// Reusable assigner: precomputes the per-component constants once so scoring
// many points does not allocate. Reads only the model's `dim` leading entries
// of each latent, so wider latents can be passed directly.
class GmmScorer {
 public:
  explicit GmmScorer(const GmmModel& m) : model_(&m) {
    detail::gmm_component_constants(m, log_const_, inv_var_);
    joint_.resize(m.k);
  }

  int assign(const double* x) {
    detail::gmm_point_log_joint(*model_, log_const_, inv_var_, x, joint_.data());
    int best = 0;
    for (int c = 1; c < model_->k; ++c) {
      if (joint_[c] > joint_[best]) best = c;
    }
    return best;
  }

 private:
  const GmmModel* model_;
  std::vector<double> log_const_, inv_var_, joint_;
};

inline int gmm_n_params(int k, int dim) { return k * 2 * dim + (k - 1); }

inline double gmm_aic(const GmmModel& m) {
  return 2.0 * gmm_n_params(m.k, m.dim) - 2.0 * m.log_likelihood;
}

// Fits one mixture per candidate size and keeps the AIC minimizer; ties go to
// the smaller k. Each candidate draws its own substream so the fits are
// independent of candidate-list order.
inline GmmModel select_gmm_by_aic(const double* data, std::size_t n, int dim,
                                  std::span<const int> candidate_ks, Rng& rng,
                                  GmmFitOptions opts = {}) {
  if (candidate_ks.empty()) throw std::invalid_argument("select_gmm_by_aic: no candidates");
  std::vector<int> ks(candidate_ks.begin(), candidate_ks.end());
  std::sort(ks.begin(), ks.end());
  GmmModel best;
  double best_aic = std::numeric_limits<double>::infinity();
  for (int k : ks) {
    Rng sub(rng.next_u64());
    GmmModel fit = fit_gmm(data, n, dim, k, sub, opts);
    double aic = gmm_aic(fit);
    if (aic < best_aic) {
      best_aic = aic;
      best = std::move(fit);
    }
  }
  return best;
}

}  // namespace grimgep
