#include <cmath>
#include <numeric>

#include "doctest.h"
#include "i2i/attention.hpp"
#include "i2i/errors.hpp"
#include "i2i/gradcheck.hpp"
#include "i2i/ops.hpp"
#include "test_util.hpp"

using namespace i2i;
using i2i::testing::project;
using i2i::testing::random_tensor;

namespace {

using T2 = Tensor<double>;

// Projection of every position by a 1x1 weight, computed directly.
std::vector<std::vector<double>> project_positions(const T2& x, const T2& weight) {
  const std::size_t c_in = x.dim(1), n = x.dim(2) * x.dim(3), c_out = weight.dim(0);
  std::vector<std::vector<double>> out(n, std::vector<double>(c_out, 0.0));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t c = 0; c < c_in; ++c) out[p][o] += weight.at(o * c_in + c) * x.at(c * n + p);
  return out;
}

// Double-loop reference: s(j, i) = f(x_i) . g(x_j).
std::vector<double> scores_oracle(const T2& x, AttentionBlock<double>& block) {
  const auto f = project_positions(x, block.w_f());
  const auto g = project_positions(x, block.w_g());
  const std::size_t n = f.size();
  std::vector<double> s(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < f[i].size(); ++c) s[j * n + i] += f[i][c] * g[j][c];
  return s;
}

// o_j = sum_i beta(j, i) h(x_i), laid out as C x N.
std::vector<double> output_oracle(const T2& x, const T2& beta, AttentionBlock<double>& block) {
  const auto h = project_positions(x, block.w_h());
  const std::size_t n = h.size(), c = block.channels();
  std::vector<double> o(c * n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) o[ch * n + j] += beta.at(j * n + i) * h[i][ch];
  return o;
}

void randomize(Tensor<double>& t, Rng& rng, double lo = -1, double hi = 1) {
  for (auto& v : t.mutable_values()) v = rng.uniform(lo, hi);
}

}  // namespace

TEST_CASE("reduced channel width") {
  Rng rng(0);
  CHECK(AttentionBlock<double>(64, rng).reduced_channels() == 8);
  CHECK(AttentionBlock<double>(3, rng).reduced_channels() == 1);
  CHECK(AttentionBlock<double>(16, rng, {.reduction = 4}).reduced_channels() == 4);
  AttentionBlock<double> b(16, rng);
  CHECK(b.w_f().shape() == Shape{2, 16, 1, 1});
  CHECK(b.w_h().shape() == Shape{16, 16, 1, 1});
  CHECK(b.gamma().item() == 0.0);
  CHECK(b.parameters().size() == 4);
  CHECK(b.buffers().empty());
}

TEST_CASE("attention scores") {
  Rng rng(1);
  AttentionBlock<double> block(4, rng);
  SUBCASE("zero input gives zero scores") {
    const auto s = attention_scores(T2::zeros(Shape{1, 4, 2, 3}), block);
    CHECK(s.shape() == Shape{1, 6, 6});
    for (const double v : s.values()) CHECK(v == 0.0);
  }
  SUBCASE("single position") {
    const auto x = random_tensor(Shape{1, 4, 1, 1}, rng);
    const auto s = attention_scores(x, block);
    CHECK(s.shape() == Shape{1, 1, 1});
    const auto f = project_positions(x, block.w_f());
    const auto g = project_positions(x, block.w_g());
    CHECK(s.item() == doctest::Approx(f[0][0] * g[0][0]).epsilon(1e-14));
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(attention_scores(T2::zeros(Shape{1, 3, 2, 2}), block), DimensionError);
  }
}

TEST_CASE("attention scores and output match double-loop oracles for N <= 16") {
  Rng rng(2);
  for (std::size_t h = 1; h <= 4; ++h) {
    for (std::size_t w = 1; w <= 4; ++w) {
      AttentionBlock<double> block(8, rng);
      randomize(block.gamma(), rng);
      const auto x = random_tensor(Shape{1, 8, h, w}, rng);
      const auto scores = attention_scores(x, block);
      const auto expected_scores = scores_oracle(x, block);
      for (std::size_t i = 0; i < expected_scores.size(); ++i) {
        CHECK(scores.at(i) == doctest::Approx(expected_scores[i]).epsilon(1e-12).scale(1.0));
      }
      const auto beta = attention_map(scores);
      const auto out = attention_output(x, beta, block);
      const auto expected_out = output_oracle(x, beta, block);
      for (std::size_t i = 0; i < expected_out.size(); ++i) {
        CHECK(out.at(i) == doctest::Approx(expected_out[i]).epsilon(1e-12).scale(1.0));
      }
    }
  }
}

TEST_CASE("attention map") {
  SUBCASE("uniform for zero scores") {
    const auto beta = attention_map(T2::zeros(Shape{1, 4, 4}));
    for (const double v : beta.values()) CHECK(v == 0.25);
  }
  SUBCASE("hand computed row") {
    const auto beta = attention_map(T2(Shape{1, 2, 2}, {std::log(1.0), std::log(3.0), 0.0, 0.0}));
    CHECK(beta.at(0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(beta.at(1) == doctest::Approx(0.75).epsilon(1e-15));
  }
  SUBCASE("rows are distributions") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const auto beta = attention_map(random_tensor(Shape{2, 9, 9}, rng, -20, 20));
      for (std::size_t r = 0; r < 18; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 9; ++c) {
          CHECK(beta.at(r * 9 + c) >= 0.0);
          total += beta.at(r * 9 + c);
        }
        CHECK(std::abs(total - 1.0) < 1e-6);
      }
    }
  }
  CHECK_THROWS_AS(attention_map(T2::zeros(Shape{1, 2, 3})), DimensionError);
}

TEST_CASE("attention output special cases") {
  Rng rng(4);
  AttentionBlock<double> block(3, rng);
  const auto x = random_tensor(Shape{1, 3, 2, 2}, rng);
  const auto h = project_positions(x, block.w_h());
  SUBCASE("identity map passes h through") {
    std::vector<double> eye(16, 0.0);
    for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
    const auto o = attention_output(x, T2(Shape{1, 4, 4}, eye), block);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 4; ++p) CHECK(o.at(c * 4 + p) == doctest::Approx(h[p][c]).epsilon(1e-14));
  }
  SUBCASE("uniform map gives the spatial mean") {
    const auto o = attention_output(x, T2::full(Shape{1, 4, 4}, 0.25), block);
    for (std::size_t c = 0; c < 3; ++c) {
      const double m = (h[0][c] + h[1][c] + h[2][c] + h[3][c]) / 4.0;
      for (std::size_t p = 0; p < 4; ++p) CHECK(o.at(c * 4 + p) == doctest::Approx(m).epsilon(1e-14));
    }
  }
  CHECK_THROWS_AS(attention_output(x, T2::zeros(Shape{1, 3, 3}), block), DimensionError);
}

TEST_CASE("attention forward residual gate") {
  Rng rng(5);
  AttentionBlock<float> block(16, rng);
  const auto x = random_tensor<float>(Shape{1, 16, 4, 4}, rng, -3, 3);
  const auto y = attention_forward(x, block);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));

  AttentionBlock<double> b2(4, rng);
  b2.gamma().mutable_values()[0] = 1.0;
  for (auto& v : b2.w_h().mutable_values()) v = 0.0;
  const auto x2 = random_tensor(Shape{2, 4, 3, 3}, rng);
  const auto y2 = attention_forward(x2, b2);
  for (std::size_t i = 0; i < x2.numel(); ++i) CHECK(y2.at(i) == x2.at(i));
}

TEST_CASE("attention output is permutation equivariant") {
  Rng rng(6);
  for (std::size_t n : {4u, 6u, 9u}) {
    AttentionBlock<double> block(5, rng);
    const auto x = random_tensor(Shape{1, 5, 1, n}, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
    std::vector<double> permuted(x.numel());
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t p = 0; p < n; ++p) permuted[c * n + perm[p]] = x.at(c * n + p);
    const T2 xp(x.shape(), permuted);
    const auto o = attention_output(x, attention_map(attention_scores(x, block)), block);
    const auto op = attention_output(xp, attention_map(attention_scores(xp, block)), block);
    for (std::size_t c = 0; c < 5; ++c)
      for (std::size_t p = 0; p < n; ++p)
        CHECK(op.at(c * n + perm[p]) == doctest::Approx(o.at(c * n + p)).epsilon(1e-12));
  }
}

TEST_CASE("attention block gradient") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(500 + seed);
    AttentionBlock<double> block(8, rng);
    randomize(block.gamma(), rng, 0.5, 1.5);
    auto x = random_tensor(Shape{1, 8, 3, 3}, rng);
    auto p = random_tensor(Shape{1, 8, 3, 3}, rng);
    const auto r = check_gradients(
        "attention_forward", [&] { return project(attention_forward(x, block), p); },
        {x, block.w_f(), block.w_g(), block.w_h(), block.gamma()});
    INFO("seed " << seed << " err " << r.max_rel_error);
    CHECK(r.passed());
  }
}

TEST_CASE("spectral norm keeps projections near unit spectral norm") {
  Rng rng(7);
  AttentionBlock<double> block(8, rng, {.reduction = 8, .spectral_norm = true});
  CHECK(block.buffers().size() == 3);
  Tensor<double> w;
  for (int it = 0; it < 50; ++it) {
    Tape tape;
    w = block.projection_h();
  }
  // Largest singular value by power iteration on the normalized matrix.
  const std::size_t n = 8;
  std::vector<double> v(n, 1.0);
  double sigma = 0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> u(n, 0.0), nv(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) u[r] += w.at(r * n + c) * v[c];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) nv[c] += w.at(r * n + c) * u[r];
    double norm = 0;
    for (double e : nv) norm += e * e;
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < n; ++c) v[c] = nv[c] / norm;
    sigma = std::sqrt(norm);
  }
  CHECK(sigma == doctest::Approx(1.0).epsilon(1e-3));
}
