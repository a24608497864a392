#include <cmath>
#include <sstream>

#include "doctest.h"
#include "i2i/dataset.hpp"
#include "i2i/errors.hpp"
#include "i2i/evaluate.hpp"
#include "i2i/fid.hpp"
#include "i2i/rng.hpp"

using namespace i2i;

namespace {

Eigen::MatrixXd gaussian_samples(Rng& rng, Eigen::Index n, Eigen::Index d, double shift = 0.0, double sd = 1.0) {
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = shift + sd * rng.normal();
  }
  return m;
}

Eigen::MatrixXd random_psd(Rng& rng, Eigen::Index d) {
  const Eigen::MatrixXd a = gaussian_samples(rng, d, d);
  return a.transpose() * a;
}

FidStats direct_stats(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
  FidStats s;
  s.mu = std::move(mu);
  s.sigma = std::move(sigma);
  s.n = 2;
  return s;
}

std::vector<Tensor<float>> domain_images(std::size_t domain, std::size_t count, std::uint64_t seed = 1) {
  DatasetSpec spec;
  spec.seed = seed;
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(render_sample_tensor<float>(spec.domain(domain), i));
  return out;
}

}  // namespace

TEST_CASE("statistics of degenerate feature sets") {
  Eigen::MatrixXd same(5, 3);
  same.rowwise() = Eigen::RowVector3d(0.5, -2.0, 3.0);
  const FidStats s = compute_stats(same);
  CHECK(s.n == 5);
  CHECK(s.sigma.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.mu(1) == -2.0);

  Eigen::MatrixXd two(2, 2);
  two << 1.0, 4.0, 3.0, -2.0;
  const FidStats t = compute_stats(two);
  CHECK(t.mu(0) == 2.0);
  CHECK(t.mu(1) == 1.0);
  // With n - 1 = 1 the covariance is the outer product of the half-difference, doubled.
  CHECK(t.sigma(0, 0) == doctest::Approx(2.0));
  CHECK(t.sigma(1, 1) == doctest::Approx(18.0));
  CHECK(t.sigma(0, 1) == doctest::Approx(-6.0));

  CHECK_THROWS_AS(compute_stats(Eigen::MatrixXd(1, 3)), ContractError);
}

TEST_CASE("statistics agree with a two-pass loop") {
  Rng rng(21);
  const Eigen::MatrixXd f = gaussian_samples(rng, 37, 6, 0.3, 2.0);
  const FidStats s = compute_stats(f);
  for (Eigen::Index j = 0; j < 6; ++j) {
    double m = 0;
    for (Eigen::Index i = 0; i < 37; ++i) m += f(i, j);
    m /= 37;
    CHECK(s.mu(j) == doctest::Approx(m).epsilon(1e-12));
  }
  for (Eigen::Index a = 0; a < 6; ++a) {
    for (Eigen::Index b = 0; b < 6; ++b) {
      double c = 0;
      for (Eigen::Index i = 0; i < 37; ++i) c += (f(i, a) - s.mu(a)) * (f(i, b) - s.mu(b));
      CHECK(s.sigma(a, b) == doctest::Approx(c / 36).epsilon(1e-12));
    }
  }
  CHECK((s.sigma - s.sigma.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("psd square root") {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(4, 4);
  CHECK((matrix_sqrt_psd(id) - id).norm() < 1e-12);

  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(2, 2);
  d(0, 0) = 4;
  d(1, 1) = 9;
  const Eigen::MatrixXd r = matrix_sqrt_psd(d);
  CHECK(r(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(r(1, 1) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(std::abs(r(0, 1)) < 1e-14);

  Rng rng(5);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::MatrixXd m = random_psd(rng, 8);
    const Eigen::MatrixXd root = matrix_sqrt_psd(m);
    worst = std::max(worst, (root * root - m).norm() / m.norm());
  }
  CHECK(worst < 1e-6);

  // Rank-deficient input: tiny negative eigenvalues from rounding are clamped.
  const Eigen::MatrixXd v = gaussian_samples(rng, 8, 3);
  const Eigen::MatrixXd low_rank = v * v.transpose();
  const Eigen::MatrixXd root = matrix_sqrt_psd(low_rank);
  CHECK((root * root - low_rank).norm() / low_rank.norm() < 1e-6);

  Eigen::MatrixXd asym = id;
  asym(0, 1) = 1e-3;
  CHECK_THROWS_AS(matrix_sqrt_psd(asym), DomainError);
  CHECK_THROWS_AS(matrix_sqrt_psd(-id), DomainError);
}

TEST_CASE("fid closed forms") {
  Rng rng(8);
  const FidStats s = compute_stats(gaussian_samples(rng, 50, 5));
  CHECK(std::abs(fid_unclamped(s, s)) < 1e-6);
  CHECK(fid(s, s) < 1e-6);

  Eigen::VectorXd ma(3), mb(3);
  ma << 1, 2, 3;
  mb << 0.5, -1, 3.25;
  const FidStats za = direct_stats(ma, Eigen::MatrixXd::Zero(3, 3));
  const FidStats zb = direct_stats(mb, Eigen::MatrixXd::Zero(3, 3));
  CHECK(fid(za, zb) == (ma - mb).squaredNorm());

  // N(0, 1) against N(1, 4): (0 - 1)^2 + (1 + 4 - 2 * 2) = 2.
  const FidStats g1 = direct_stats(Eigen::VectorXd::Constant(1, 0.0), Eigen::MatrixXd::Constant(1, 1, 1.0));
  const FidStats g2 = direct_stats(Eigen::VectorXd::Constant(1, 1.0), Eigen::MatrixXd::Constant(1, 1, 4.0));
  CHECK(fid(g1, g2) == doctest::Approx(2.0).epsilon(1e-12));
  const FidStats sampled1 = compute_stats(gaussian_samples(rng, 200000, 1, 0.0, 1.0));
  const FidStats sampled2 = compute_stats(gaussian_samples(rng, 200000, 1, 1.0, 2.0));
  CHECK(fid(sampled1, sampled2) == doctest::Approx(2.0).epsilon(0.02));

  CHECK_THROWS_AS(fid(g1, s), ContractError);
}

TEST_CASE("fid is symmetric") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const FidStats a = compute_stats(gaussian_samples(rng, 40, 8, 0.0, 1.0));
    const FidStats b = compute_stats(gaussian_samples(rng, 30, 8, 0.4, 1.5));
    CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-6);
  }
}

TEST_CASE("fid grows with a mean shift as the closed form predicts") {
  Rng rng(17);
  const Eigen::Index d = 64;
  const FidStats base = compute_stats(gaussian_samples(rng, 20000, d));
  double previous = -1;
  for (const double delta : {0.0, 0.5, 1.0, 2.0}) {
    const double value = fid(base, compute_stats(gaussian_samples(rng, 20000, d, delta)));
    CHECK(value > previous);
    previous = value;
    if (delta > 0) CHECK(value == doctest::Approx(static_cast<double>(d) * delta * delta).epsilon(0.02));
  }
}

TEST_CASE("negative rounding residue is clamped and reported") {
  // Nearly equal covariances: the raw value may land a hair below zero.
  FidStats a = direct_stats(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2) * 3.0);
  FidStats b = a;
  b.sigma(0, 0) = 3.0 + 1e-15;
  const double raw = fid_unclamped(a, b);
  std::ostringstream log;
  const double clamped = fid(a, b, &log);
  CHECK(clamped >= 0.0);
  if (raw < 0) {
    CHECK(clamped == 0.0);
    CHECK(log.str().find("reporting 0") != std::string::npos);
  } else {
    CHECK(clamped == raw);
  }
}

TEST_CASE("feature extractor is fixed and shape checked") {
  const FeatureExtractor a, b;
  const auto images = domain_images(0, 4);
  const Eigen::MatrixXd fa = a.features(images), fb = b.features(images);
  CHECK(fa.rows() == 4);
  CHECK(fa.cols() == 64);
  CHECK(fa == fb);
  CHECK((fa.row(0) - fa.row(1)).norm() > 0);
  CHECK_THROWS_AS(a.features(Tensor<double>::zeros({1, 1, 16, 16})), DimensionError);
  CHECK_THROWS_AS(a.features(Tensor<double>::zeros({1, 3, 4, 4})), DimensionError);
}

TEST_CASE("toy domains are far apart under the extractor") {
  const FeatureExtractor extractor;
  const auto triangles = domain_images(0, 60);
  const auto ellipses = domain_images(1, 60);
  const auto more_triangles = domain_images(0, 60, 99);
  const FidStats t = extractor.stats(triangles);
  CHECK(fid(t, t) < 1e-6);
  const double across = fid(t, extractor.stats(ellipses));
  const double within = fid(t, extractor.stats(more_triangles));
  CHECK(across > 0);
  CHECK(across > within);
}

TEST_CASE("translation evaluation") {
  ModelConfig config;
  config.image_size = 16;
  config.base_channels = 4;
  config.style_dim = 4;
  config.residual_blocks = 1;
  config.mlp_dim = 8;
  config.upsample_kernel = 3;
  config.seed = 2;
  const TranslationModel<float> model(config);
  const FeatureExtractor extractor;
  const auto source = domain_images(0, 6);
  const auto target = domain_images(1, 6);

  const auto translated = translate_set(model, source, Domain::One, 3, 4);
  REQUIRE(translated.size() == 18);
  CHECK(translated[0].shape() == source[0].shape());
  const auto again = translate_set(model, source, Domain::One, 3, 4);
  for (std::size_t i = 0; i < translated.size(); ++i) {
    const auto a = translated[i].values(), b = again[i].values();
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }

  const TranslationEval r = evaluate_translation(model, source, target, Domain::One, 2, 4, extractor);
  CHECK(r.translated == 12);
  CHECK(r.baseline > 0);
  CHECK(r.fid >= 0);
  CHECK(r.baseline == doctest::Approx(fid(extractor.stats(source), extractor.stats(target))));
  CHECK_THROWS_AS(evaluate_translation(model, {source[0]}, target, Domain::One, 1, 4, extractor), ContractError);
  CHECK_THROWS_AS(translate_set(model, source, Domain::One, 0, 4), ConfigError);
}

TEST_CASE("fid table layout") {
  const std::string table = format_fid_table({{"triangles2ellipses", "ds-us", 12.5, 40.25}, {"t2e", "ds", 1, 2}});
  std::istringstream in(table);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].rfind("dataset", 0) == 0);
  CHECK(lines[0].find("baseline FID") != std::string::npos);
  CHECK(lines[1].find("12.500000") != std::string::npos);
  CHECK(lines[1].size() == lines[0].size());
  CHECK(lines[2].size() == lines[0].size());
}
