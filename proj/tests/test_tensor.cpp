#include <cmath>
#include <functional>

#include "doctest.h"
#include "i2i/errors.hpp"
#include "i2i/gradcheck.hpp"
#include "i2i/ops.hpp"
#include "test_util.hpp"

using namespace i2i;
using i2i::testing::project;
using i2i::testing::random_tensor;

namespace {

using T2 = Tensor<double>;

// Runs the finite-difference check on 10 seeds; `make` builds inputs and the
// loss closure for one seed.
void check_op_on_seeds(const char* name,
                       const std::function<std::pair<std::function<T2()>, std::vector<T2>>(Rng&)>& make) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    auto [loss_fn, inputs] = make(rng);
    const auto r = check_gradients(name, loss_fn, inputs);
    INFO(name << " seed " << seed << " rel err " << r.max_rel_error << " skipped " << r.skipped_kinks);
    CHECK(r.passed());
  }
}

}  // namespace

TEST_CASE("tensor construction validates shape") {
  CHECK_THROWS_AS(T2(Shape{2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(T2(Shape{0, 2}, {}), DimensionError);
  const T2 t(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul identity cases") {
  const T2 eye(Shape{2, 2}, {1, 0, 0, 1});
  const T2 a(Shape{2, 2}, {1, 2, 3, 4});
  auto ii = matmul(eye, eye);
  CHECK(std::vector<double>(ii.values().begin(), ii.values().end()) == std::vector<double>{1, 0, 0, 1});
  auto ai = matmul(a, eye);
  auto ia = matmul(eye, a);
  CHECK(std::vector<double>(ai.values().begin(), ai.values().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK(std::vector<double>(ia.values().begin(), ia.values().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(matmul(a, T2(Shape{3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("matmul with identity on random matrices is exact") {
  Rng rng(3);
  const auto a = random_tensor(Shape{4, 4}, rng);
  std::vector<double> e(16, 0.0);
  for (int i = 0; i < 4; ++i) e[i * 5] = 1.0;
  const T2 eye(Shape{4, 4}, e);
  const auto left = matmul(eye, a);
  const auto right = matmul(a, eye);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(left.at(i) == a.at(i));
    CHECK(right.at(i) == a.at(i));
  }
}

TEST_CASE("matmul gradient") {
  check_op_on_seeds("matmul", [](Rng& rng) {
    auto a = random_tensor(Shape{3, 4}, rng);
    auto b = random_tensor(Shape{4, 2}, rng);
    auto w = random_tensor(Shape{3, 2}, rng);
    return std::pair{std::function<T2()>([=] { return project(matmul(a, b), w); }), std::vector<T2>{a, b}};
  });
}

TEST_CASE("bmm gradient in all transpose combinations") {
  for (int mode = 0; mode < 4; ++mode) {
    const bool ta = mode & 1, tb = mode & 2;
    check_op_on_seeds("bmm", [=](Rng& rng) {
      auto a = random_tensor(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng);
      auto b = random_tensor(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng);
      auto w = random_tensor(Shape{2, 3, 5}, rng);
      return std::pair{std::function<T2()>([=] { return project(bmm(a, b, ta, tb), w); }), std::vector<T2>{a, b}};
    });
  }
}

TEST_CASE("linear gradient") {
  check_op_on_seeds("linear", [](Rng& rng) {
    auto x = random_tensor(Shape{2, 5}, rng);
    auto w = random_tensor(Shape{3, 5}, rng);
    auto b = random_tensor(Shape{3}, rng);
    auto p = random_tensor(Shape{2, 3}, rng);
    return std::pair{std::function<T2()>([=] { return project(linear(x, w, b), p); }), std::vector<T2>{x, w, b}};
  });
}

TEST_CASE("conv2d scalar 1x1 kernel doubles input") {
  Rng rng(1);
  const auto x = random_tensor(Shape{1, 1, 3, 3}, rng);
  const auto y = conv2d(x, T2(Shape{1, 1, 1, 1}, {2.0}), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(y.at(i) == 2.0 * x.at(i));
}

TEST_CASE("conv2d impulse response reproduces the kernel") {
  std::vector<double> img(25, 0.0);
  img[2 * 5 + 2] = 1.0;
  const T2 delta(Shape{1, 1, 5, 5}, img);
  const T2 kernel(Shape{1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto y = conv2d(delta, kernel, 1, 1);
  // Cross-correlation of a delta yields the kernel flipped around its centre.
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(y.at((1 + i) * 5 + (1 + j)) == kernel.at((2 - i) * 3 + (2 - j)));
  CHECK(y.at(0) == 0.0);
}

TEST_CASE("conv2d output geometry and errors") {
  Rng rng(2);
  const auto x = random_tensor(Shape{2, 3, 8, 8}, rng);
  const auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
  CHECK(conv2d(x, w, 2, 1).shape() == Shape{2, 4, 4, 4});
  CHECK(conv2d(x, random_tensor(Shape{4, 3, 4, 4}, rng), 2, 1).shape() == Shape{2, 4, 4, 4});
  CHECK_THROWS_AS(conv2d(x, random_tensor(Shape{4, 2, 3, 3}, rng), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, random_tensor(Shape{4, 3, 11, 11}, rng), 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(x, w, 0, 1), DimensionError);
}

TEST_CASE("conv2d gradient") {
  check_op_on_seeds("conv2d", [](Rng& rng) {
    auto x = random_tensor(Shape{2, 3, 8, 8}, rng);
    auto w = random_tensor(Shape{4, 3, 3, 3}, rng);
    auto b = random_tensor(Shape{4}, rng);
    auto p = random_tensor(Shape{2, 4, 4, 4}, rng);
    return std::pair{std::function<T2()>([=] { return project(conv2d(x, w, b, 2, 1), p); }),
                     std::vector<T2>{x, w, b}};
  });
  check_op_on_seeds("conv2d_pointwise", [](Rng& rng) {
    auto x = random_tensor(Shape{1, 3, 4, 4}, rng);
    auto w = random_tensor(Shape{2, 3, 1, 1}, rng);
    auto p = random_tensor(Shape{1, 2, 4, 4}, rng);
    return std::pair{std::function<T2()>([=] { return project(conv2d(x, w, 1, 0), p); }), std::vector<T2>{x, w}};
  });
}

TEST_CASE("softmax examples") {
  const auto u = softmax(T2(Shape{3}, {0, 0, 0}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  for (const double shift : {-50.0, 0.0, 3.5, 700.0}) {
    const double c = 1.25;
    const auto s = softmax(T2(Shape{2}, {shift, shift + c}), 0);
    CHECK(s.at(0) == doctest::Approx(1.0 / (1.0 + std::exp(c))).epsilon(1e-12));
    CHECK(s.at(1) == doctest::Approx(std::exp(c) / (1.0 + std::exp(c))).epsilon(1e-12));
  }
  CHECK_THROWS_AS(softmax(T2(Shape{3}, {0, 0, 0}), 1), DimensionError);
}

TEST_CASE("softmax rows are distributions") {
  Rng rng(5);
  const auto x = random_tensor(Shape{5, 7}, rng, -5, 5);
  const auto y = softmax(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(y.at(r * 7 + c) >= 0.0);
      total += y.at(r * 7 + c);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  check_op_on_seeds("softmax", [](Rng& rng) {
    auto x = random_tensor(Shape{5, 7}, rng, -2, 2);
    auto p = random_tensor(Shape{5, 7}, rng);
    return std::pair{std::function<T2()>([=] { return project(softmax(x, 1), p); }), std::vector<T2>{x}};
  });
  check_op_on_seeds("softmax_axis0", [](Rng& rng) {
    auto x = random_tensor(Shape{4, 3, 2}, rng, -2, 2);
    auto p = random_tensor(Shape{4, 3, 2}, rng);
    return std::pair{std::function<T2()>([=] { return project(softmax(x, 1), p); }), std::vector<T2>{x}};
  });
}

TEST_CASE("elementwise examples") {
  const auto r = relu(T2(Shape{2}, {-1, 2}));
  CHECK(r.at(0) == 0.0);
  CHECK(r.at(1) == 2.0);
  CHECK(tanh(T2::scalar(0)).item() == 0.0);
  CHECK(sigmoid(T2::scalar(0)).item() == 0.5);
  CHECK(leaky_relu(T2::scalar(-1)).item() == doctest::Approx(-0.2));
  CHECK_THROWS_AS(log(T2(Shape{2}, {1, 0})), DomainError);
  CHECK_THROWS_AS(log(T2(Shape{1}, {-3})), DomainError);
  CHECK_THROWS_AS(add(T2(Shape{2}, {1, 2}), T2(Shape{3}, {1, 2, 3})), DimensionError);
  const auto bc = mul(T2::scalar(3), T2(Shape{2}, {1, 2}));
  CHECK(bc.shape() == Shape{2});
  CHECK(bc.at(1) == 6.0);
}

TEST_CASE("elementwise gradients") {
  using Unary = std::function<T2(const T2&)>;
  const std::vector<std::pair<const char*, Unary>> unary_ops = {
      {"relu", [](const T2& x) { return relu(x); }},
      {"leaky_relu", [](const T2& x) { return leaky_relu(x, 0.2); }},
      {"tanh", [](const T2& x) { return tanh(x); }},
      {"sigmoid", [](const T2& x) { return sigmoid(x); }},
      {"abs", [](const T2& x) { return abs(x); }},
      {"scale", [](const T2& x) { return scale(x, -2.5); }},
      {"add_scalar", [](const T2& x) { return add_scalar(x, 0.75); }},
      {"clamp", [](const T2& x) { return clamp(x, -0.5, 0.5); }},
  };
  for (const auto& [name, op] : unary_ops) {
    check_op_on_seeds(name, [op](Rng& rng) {
      auto x = random_tensor(Shape{3, 4}, rng, -2, 2);
      auto p = random_tensor(Shape{3, 4}, rng);
      return std::pair{std::function<T2()>([=] { return project(op(x), p); }), std::vector<T2>{x}};
    });
  }
  check_op_on_seeds("log", [](Rng& rng) {
    auto x = random_tensor(Shape{3, 4}, rng, 0.2, 3.0);
    auto p = random_tensor(Shape{3, 4}, rng);
    return std::pair{std::function<T2()>([=] { return project(log(x), p); }), std::vector<T2>{x}};
  });
  using Binary = std::function<T2(const T2&, const T2&)>;
  const std::vector<std::pair<const char*, Binary>> binary_ops = {
      {"add", [](const T2& a, const T2& b) { return add(a, b); }},
      {"sub", [](const T2& a, const T2& b) { return sub(a, b); }},
      {"mul", [](const T2& a, const T2& b) { return mul(a, b); }},
      {"div", [](const T2& a, const T2& b) { return div(a, b); }},
  };
  for (const auto& [name, op] : binary_ops) {
    check_op_on_seeds(name, [op](Rng& rng) {
      auto a = random_tensor(Shape{3, 4}, rng, -2, 2);
      auto b = random_tensor(Shape{3, 4}, rng, 0.5, 2);
      auto p = random_tensor(Shape{3, 4}, rng);
      return std::pair{std::function<T2()>([=] { return project(op(a, b), p); }), std::vector<T2>{a, b}};
    });
    check_op_on_seeds(name, [op](Rng& rng) {
      auto a = random_tensor(Shape{3, 4}, rng, -2, 2);
      auto s = random_tensor(Shape{1}, rng, 0.5, 2);
      auto p = random_tensor(Shape{3, 4}, rng);
      return std::pair{std::function<T2()>([=] { return add(project(op(a, s), p), project(op(s, a), p)); }),
                       std::vector<T2>{a, s}};
    });
  }
}

TEST_CASE("reductions") {
  const T2 a(Shape{2}, {1, 2});
  const T2 b(Shape{2}, {2, 4});
  CHECK(l1_norm(a, a).item() == 0.0);
  CHECK(l1_norm(a, b).item() == doctest::Approx(1.5));
  CHECK_THROWS_AS(l1_norm(a, T2(Shape{3}, {1, 2, 3})), DimensionError);
  {
    auto x = T2(Shape{4}, {1, 2, 3, 4}, true);
    Tape tape;
    tape.backward(mean(x));
    for (const double g : x.grad()) CHECK(g == 0.25);
  }
  check_op_on_seeds("sum", [](Rng& rng) {
    auto x = random_tensor(Shape{3, 4}, rng);
    return std::pair{std::function<T2()>([=] { return sum(x); }), std::vector<T2>{x}};
  });
  check_op_on_seeds("mean", [](Rng& rng) {
    auto x = random_tensor(Shape{3, 4}, rng);
    return std::pair{std::function<T2()>([=] { return mean(mul(x, x)); }), std::vector<T2>{x}};
  });
  check_op_on_seeds("l1_norm", [](Rng& rng) {
    auto a = random_tensor(Shape{3, 4}, rng);
    auto b = random_tensor(Shape{3, 4}, rng);
    return std::pair{std::function<T2()>([=] { return l1_norm(a, b); }), std::vector<T2>{a, b}};
  });
}

TEST_CASE("instance norm") {
  const T2 constant = T2::full(Shape{1, 2, 3, 3}, 4.0);
  const auto z = instance_norm(constant, T2(), T2());
  for (const double v : z.values()) CHECK(v == 0.0);

  Rng rng(9);
  const auto x = random_tensor(Shape{2, 3, 5, 5}, rng, -3, 7);
  const auto y = instance_norm(x, T2::full(Shape{3}, 1.0), T2::zeros(Shape{3}));
  for (std::size_t p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < 25; ++i) m += y.at(p * 25 + i);
    m /= 25;
    for (std::size_t i = 0; i < 25; ++i) v += (y.at(p * 25 + i) - m) * (y.at(p * 25 + i) - m);
    v /= 25;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-3);
  }
  CHECK_THROWS_AS(instance_norm(random_tensor(Shape{1, 2, 1, 1}, rng), T2(), T2()), DimensionError);
  check_op_on_seeds("instance_norm", [](Rng& rng) {
    auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
    auto w = random_tensor(Shape{3}, rng, 0.5, 1.5);
    auto b = random_tensor(Shape{3}, rng);
    auto p = random_tensor(Shape{2, 3, 4, 4}, rng);
    return std::pair{std::function<T2()>([=] { return project(instance_norm(x, w, b), p); }),
                     std::vector<T2>{x, w, b}};
  });
}

TEST_CASE("adaptive instance norm") {
  Rng rng(11);
  const auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
  const auto plain = instance_norm(x, T2(), T2());
  const auto ident = adaptive_instance_norm(x, T2::full(Shape{2, 3}, 1.0), T2::zeros(Shape{2, 3}));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(ident.at(i) == plain.at(i));

  const auto shift = random_tensor(Shape{2, 3}, rng);
  const auto flat = adaptive_instance_norm(x, T2::zeros(Shape{2, 3}), shift);
  for (std::size_t p = 0; p < 6; ++p)
    for (std::size_t i = 0; i < 16; ++i) CHECK(flat.at(p * 16 + i) == shift.at(p));

  CHECK_THROWS_AS(adaptive_instance_norm(x, T2::zeros(Shape{2, 4}), T2::zeros(Shape{2, 4})), DimensionError);
  check_op_on_seeds("adaptive_instance_norm", [](Rng& rng) {
    auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
    auto s = random_tensor(Shape{2, 3}, rng);
    auto t = random_tensor(Shape{2, 3}, rng);
    auto p = random_tensor(Shape{2, 3, 4, 4}, rng);
    return std::pair{std::function<T2()>([=] { return project(adaptive_instance_norm(x, s, t), p); }),
                     std::vector<T2>{x, s, t}};
  });
}

TEST_CASE("upsample, pooling, reshape, slicing") {
  const auto up = upsample_nearest2x(T2(Shape{1, 1, 1, 1}, {1.0}));
  CHECK(up.shape() == Shape{1, 1, 2, 2});
  for (const double v : up.values()) CHECK(v == 1.0);
  Rng rng(4);
  CHECK(upsample_nearest2x(random_tensor(Shape{2, 3, 4, 5}, rng)).shape() == Shape{2, 3, 8, 10});
  check_op_on_seeds("upsample_nearest2x", [](Rng& rng) {
    auto x = random_tensor(Shape{1, 2, 3, 3}, rng);
    auto p = random_tensor(Shape{1, 2, 6, 6}, rng);
    return std::pair{std::function<T2()>([=] { return project(upsample_nearest2x(x), p); }), std::vector<T2>{x}};
  });
  check_op_on_seeds("global_avg_pool", [](Rng& rng) {
    auto x = random_tensor(Shape{2, 3, 3, 3}, rng);
    auto p = random_tensor(Shape{2, 3}, rng);
    return std::pair{std::function<T2()>([=] { return project(global_avg_pool(x), p); }), std::vector<T2>{x}};
  });
  check_op_on_seeds("slice_reshape", [](Rng& rng) {
    auto x = random_tensor(Shape{2, 6}, rng);
    auto p = random_tensor(Shape{2, 1, 2}, rng);
    return std::pair{std::function<T2()>([=] { return project(reshape(slice_columns(x, 1, 2), Shape{2, 1, 2}), p); }),
                     std::vector<T2>{x}};
  });
  CHECK_THROWS_AS(reshape(random_tensor(Shape{2, 3}, rng), Shape{4}), DimensionError);
  CHECK_THROWS_AS(slice_columns(random_tensor(Shape{2, 3}, rng), 2, 2), DimensionError);
}

TEST_CASE("backward contract") {
  SUBCASE("sum gives unit gradient") {
    auto x = T2(Shape{2, 2}, {1, -2, 3, 4}, true);
    Tape tape;
    backward(sum(x));
    for (const double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("half mean square gives x / N") {
    auto x = T2(Shape{4}, {1, -2, 3, 0.5}, true);
    Tape tape;
    backward(scale(mean(mul(x, x)), 0.5));
    for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == doctest::Approx(x.at(i) / 4.0));
  }
  SUBCASE("non-scalar loss") {
    auto x = T2(Shape{2}, {1, 2}, true);
    Tape tape;
    CHECK_THROWS_AS(tape.backward(relu(x)), ContractError);
  }
  SUBCASE("double backward without new forward") {
    auto x = T2(Shape{2}, {1, 2}, true);
    Tape tape;
    auto loss = sum(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
    // A fresh forward makes backward legal again; gradients accumulate.
    auto again = sum(x);
    tape.backward(again);
    CHECK(x.grad()[0] == 2.0);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
  }
  SUBCASE("no tape recording under NoGradGuard") {
    auto x = T2(Shape{2}, {1, 2}, true);
    Tape tape;
    NoGradGuard guard;
    auto y = sum(x);
    CHECK_FALSE(y.requires_grad());
    CHECK(tape.size() == 0);
  }
  SUBCASE("backward without an active tape") {
    auto x = T2(Shape{2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(sum(x)), StateError);
  }
  SUBCASE("tensors not requiring grad are untouched") {
    auto x = T2(Shape{2}, {1, 2}, true);
    auto c = T2(Shape{2}, {3, 4}, false);
    Tape tape;
    tape.backward(sum(mul(x, c)));
    CHECK_FALSE(c.has_grad());
    CHECK(x.grad()[1] == 4.0);
  }
}

TEST_CASE("reverse execution order") {
  // A chain where the order matters: y = relu(x) * 3, z = y + y.
  auto x = T2(Shape{3}, {-1, 2, 3}, true);
  Tape tape;
  const auto y = scale(relu(x), 3.0);
  tape.backward(sum(add(y, y)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 6.0);
  CHECK(x.grad()[2] == 6.0);
}

TEST_CASE("non-finite forward values are errors") {
  CHECK_THROWS_AS(scale(T2::scalar(1e308), 10.0), NumericError);
  CHECK_THROWS_AS(scale(Tensor<float>::scalar(3e38f), 10.0), NumericError);
}

TEST_CASE("forward is bitwise deterministic in float32") {
  Rng r1(77), r2(77);
  const auto x1 = random_tensor<float>(Shape{1, 3, 8, 8}, r1);
  const auto w1 = random_tensor<float>(Shape{5, 3, 3, 3}, r1);
  const auto x2 = random_tensor<float>(Shape{1, 3, 8, 8}, r2);
  const auto w2 = random_tensor<float>(Shape{5, 3, 3, 3}, r2);
  const auto y1 = softmax(conv2d(x1, w1, 1, 1), 1);
  const auto y2 = softmax(conv2d(x2, w2, 1, 1), 1);
  for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1.at(i) == y2.at(i));
}
