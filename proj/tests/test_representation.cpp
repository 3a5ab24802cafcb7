#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "grimgep/representation.hpp"
#include "grimgep/rng.hpp"
#include "support/oracles.hpp"

using namespace grimgep;

namespace {

std::vector<double> flatten_all(const std::vector<Image>& imgs) {
  std::vector<double> rows;
  for (const Image& img : imgs) {
    std::vector<double> f = downsample2_flatten(img);
    rows.insert(rows.end(), f.begin(), f.end());
  }
  return rows;
}

}  // namespace

TEST_CASE("fit_pca: rank-1 data recovers the line") {
  Rng rng(1);
  // 100 images on a line through the origin in pixel space: img = t * base.
  Image base = oracle::random_image(8, 8, rng);
  std::vector<Image> samples;
  for (int i = 0; i < 100; ++i) {
    Image img = base;
    float t = static_cast<float>(rng.uniform());
    for (float& v : img.data) v *= t;
    samples.push_back(img);
  }
  PcaModel model = fit_pca(samples, 1);
  for (const Image& img : samples) {
    std::vector<double> latent = embed(model, img);
    std::vector<double> rec = reconstruct(model, latent);
    std::vector<double> f = downsample2_flatten(img);
    double err = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) err += (rec[i] - f[i]) * (rec[i] - f[i]);
    REQUIRE(err < 1e-8);
  }
}

TEST_CASE("fit_pca: components are orthonormal") {
  Rng rng(2);
  std::vector<Image> samples;
  for (int i = 0; i < 60; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  PcaModel model = fit_pca(samples, 5);
  for (int a = 0; a < model.latent_dim; ++a) {
    for (int b = 0; b < model.latent_dim; ++b) {
      double dot = 0.0;
      for (int i = 0; i < model.input_dim; ++i) {
        dot += model.components[a * model.input_dim + i] * model.components[b * model.input_dim + i];
      }
      REQUIRE(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-8);
    }
  }
}

TEST_CASE("fit_pca: explained variances match a dense eigensolver") {
  Rng rng(3);
  std::vector<Image> samples;
  for (int i = 0; i < 50; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  PcaModel model = fit_pca(samples, 4);
  std::vector<double> rows = flatten_all(samples);
  std::size_t dim = downsample2_flatten(samples[0]).size();
  std::vector<double> cov = oracle::sample_covariance(rows, samples.size(), dim);
  std::vector<double> eig = oracle::dense_symmetric_eigenvalues(cov, static_cast<int>(dim));
  for (int j = 0; j < 4; ++j) {
    REQUIRE(model.explained_variance[j] == doctest::Approx(eig[j]).epsilon(1e-6));
  }
}

TEST_CASE("fit_pca: deterministic sign convention and refit stability") {
  Rng rng(4);
  std::vector<Image> samples;
  for (int i = 0; i < 40; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  PcaModel a = fit_pca(samples, 3);
  PcaModel b = fit_pca(samples, 3);
  CHECK(a.components == b.components);
  CHECK(a.mean == b.mean);
  for (int j = 0; j < a.latent_dim; ++j) {
    double best = -1.0;
    std::size_t arg = 0;
    for (int i = 0; i < a.input_dim; ++i) {
      double mag = std::abs(a.components[j * a.input_dim + i]);
      if (mag > best) {
        best = mag;
        arg = static_cast<std::size_t>(i);
      }
    }
    CHECK(a.components[j * a.input_dim + arg] > 0.0);
  }
}

TEST_CASE("fit_pca: errors on too few samples") {
  Rng rng(5);
  std::vector<Image> samples;
  for (int i = 0; i < 3; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  CHECK_THROWS_AS(fit_pca(samples, 4), std::invalid_argument);
  CHECK_THROWS_AS(fit_pca({}, 1), std::invalid_argument);
}

TEST_CASE("fit_pca: reconstruction error non-increasing in d") {
  Rng rng(6);
  std::vector<Image> samples;
  for (int i = 0; i < 30; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  double prev = std::numeric_limits<double>::infinity();
  for (int d = 1; d <= 6; ++d) {
    PcaModel model = fit_pca(samples, d);
    double total = 0.0;
    for (const Image& img : samples) {
      std::vector<double> f = downsample2_flatten(img);
      std::vector<double> rec = reconstruct(model, embed(model, img));
      for (std::size_t i = 0; i < f.size(); ++i) total += (f[i] - rec[i]) * (f[i] - rec[i]);
    }
    total /= static_cast<double>(samples.size());
    REQUIRE(total <= prev + 1e-9);
    prev = total;
  }
}

TEST_CASE("embed: centering, linearity, non-expansiveness") {
  Rng rng(7);
  std::vector<Image> samples;
  for (int i = 0; i < 40; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  PcaModel model = fit_pca(samples, 4);

  // Embedding the mean point gives (numerically) zero.
  std::vector<double> out(model.latent_dim);
  embed_features(model, model.mean.data(), out.data());
  for (double v : out) CHECK(std::abs(v) < 1e-10);

  // Affinity: embed(a) - embed(b) depends only on the feature difference.
  Image a = oracle::random_image(8, 8, rng);
  Image b = oracle::random_image(8, 8, rng);
  std::vector<double> ea = embed(model, a);
  std::vector<double> eb = embed(model, b);
  std::vector<double> fa = downsample2_flatten(a);
  std::vector<double> fb = downsample2_flatten(b);
  for (int j = 0; j < model.latent_dim; ++j) {
    double expected = 0.0;
    for (int i = 0; i < model.input_dim; ++i) {
      expected += model.components[j * model.input_dim + i] * (fa[i] - fb[i]);
    }
    CHECK(ea[j] - eb[j] == doctest::Approx(expected).epsilon(1e-10));
  }

  // Orthonormal projection never expands the centered feature vector.
  double feature_norm = 0.0, latent_norm = 0.0;
  for (int i = 0; i < model.input_dim; ++i) {
    double c = fa[i] - model.mean[i];
    feature_norm += c * c;
  }
  for (double v : ea) latent_norm += v * v;
  CHECK(latent_norm <= feature_norm + 1e-9);
}

TEST_CASE("embed: dimension mismatch errors") {
  Rng rng(8);
  std::vector<Image> samples;
  for (int i = 0; i < 20; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  PcaModel model = fit_pca(samples, 2);
  CHECK_THROWS_AS(embed(model, oracle::random_image(12, 12, rng)), std::invalid_argument);
}

TEST_CASE("embed/reconstruct: identity on the subspace") {
  Rng rng(9);
  std::vector<Image> samples;
  for (int i = 0; i < 30; ++i) samples.push_back(oracle::random_image(8, 8, rng));
  PcaModel model = fit_pca(samples, 5);
  Rng pick(10);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> latent(model.latent_dim);
    for (double& v : latent) v = pick.uniform_in(-2.0, 2.0);
    std::vector<double> x = reconstruct(model, latent);
    std::vector<double> back(model.latent_dim);
    embed_features(model, x.data(), back.data());
    for (int j = 0; j < model.latent_dim; ++j) {
      REQUIRE(std::abs(back[j] - latent[j]) < 1e-8);
    }
  }
}

TEST_CASE("reward: metric basics") {
  CHECK(reward(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0}) == 0.0);
  CHECK(reward(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}) ==
        doctest::Approx(-5.0));
  std::vector<double> a = {0.3, -1.2, 2.0};
  std::vector<double> b = {1.1, 0.4, -0.7};
  CHECK(reward(a, b) == reward(b, a));
  CHECK(reward(a, b) < 0.0);
  CHECK_THROWS_AS(reward(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}),
                  std::invalid_argument);
}

TEST_CASE("fit_density: support subsampling") {
  Rng rng(11);
  std::vector<std::vector<double>> small(10, std::vector<double>{0.0, 0.0});
  for (auto& v : small) {
    v[0] = rng.uniform();
    v[1] = rng.uniform();
  }
  DensityModel m = fit_density(small, 0.5, 512, rng);
  CHECK(m.count == 10);

  std::vector<std::vector<double>> big(1000, std::vector<double>{0.0, 0.0});
  for (auto& v : big) {
    v[0] = rng.uniform();
    v[1] = rng.uniform();
  }
  DensityModel capped = fit_density(big, 0.5, 512, rng);
  CHECK(capped.count == 512);

  CHECK_THROWS_AS(fit_density(big, 0.0, 512, rng), std::invalid_argument);
  CHECK_THROWS_AS(fit_density({}, 0.5, 512, rng), std::invalid_argument);
}

TEST_CASE("density: kernel peak and symmetry") {
  Rng rng(12);
  double h = 0.7;
  std::vector<std::vector<double>> pts = {{0.5, -0.25, 1.0}};
  DensityModel m = fit_density(pts, h, 512, rng);
  double peak = density(m, pts[0]);
  CHECK(peak == doctest::Approx(std::pow(2.0 * std::numbers::pi * h * h, -1.5)).epsilon(1e-12));

  // At a point equidistant from two equal-weight support points, the mean
  // over both kernels equals either single-point contribution.
  std::vector<std::vector<double>> two = {{-1.0, 0.0}, {1.0, 0.0}};
  DensityModel m2 = fit_density(two, 0.5, 512, rng);
  DensityModel one = fit_density({{-1.0, 0.0}}, 0.5, 512, rng);
  std::vector<double> midpoint = {0.0, 0.0};
  CHECK(density(m2, midpoint) == doctest::Approx(density(one, midpoint)).epsilon(1e-12));
}

TEST_CASE("density: matches a direct kernel-sum oracle") {
  Rng rng(13);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({rng.uniform_in(-1, 1), rng.uniform_in(-1, 1)});
  double h = 0.4;
  DensityModel m = fit_density(pts, h, 512, rng);
  for (int probe = 0; probe < 20; ++probe) {
    std::vector<double> x = {rng.uniform_in(-2, 2), rng.uniform_in(-2, 2)};
    double expected = oracle::kernel_density_sum(pts, x, h);
    REQUIRE(std::abs(density(m, x) - expected) < 1e-10);
    REQUIRE(density(m, x) > 0.0);
  }
}

TEST_CASE("log_density agrees with density where both are representable") {
  Rng rng(14);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({rng.uniform_in(-1, 1), rng.uniform_in(-1, 1)});
  DensityModel m = fit_density(pts, 0.5, 512, rng);
  for (int probe = 0; probe < 50; ++probe) {
    std::vector<double> x = {rng.uniform_in(-3, 3), rng.uniform_in(-3, 3)};
    REQUIRE(std::abs(std::exp(log_density(m, x)) - density(m, x)) <
            1e-12 * density(m, x) + 1e-300);
  }
  // Far probes stay finite in log space.
  std::vector<double> far = {1e4, -1e4};
  CHECK(std::isfinite(log_density(m, far)));
}

TEST_CASE("density: mass integrates to about one") {
  Rng rng(15);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 40; ++i) pts.push_back({rng.uniform_in(-1, 1), rng.uniform_in(-1, 1)});
  double h = 0.3;
  DensityModel m = fit_density(pts, h, 512, rng);
  // Monte-Carlo integration over a box that safely contains the mass.
  const double lo = -4.0, hi = 4.0;
  const int n = 10000;
  double sum = 0.0;
  Rng mc(16);
  for (int i = 0; i < n; ++i) {
    std::vector<double> x = {mc.uniform_in(lo, hi), mc.uniform_in(lo, hi)};
    sum += density(m, x);
  }
  double volume = (hi - lo) * (hi - lo);
  double mass = sum / n * volume;
  CHECK(mass > 0.95);
  CHECK(mass < 1.05);
}

TEST_CASE("fast_exp is accurate across the kernel range") {
  Rng rng(17);
  for (int i = 0; i < 20000; ++i) {
    double x = -rng.uniform() * 700.0;
    double expected = std::exp(x);
    double got = grimgep::detail::fast_exp(x);
    REQUIRE(std::abs(got - expected) <= 4e-15 * expected);
  }
  CHECK(grimgep::detail::fast_exp(0.0) == 1.0);
  CHECK(grimgep::detail::fast_exp(-800.0) == 0.0);
}
