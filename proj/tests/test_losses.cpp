#include <cmath>

#include "doctest.h"
#include "i2i/gradcheck.hpp"
#include "i2i/losses.hpp"
#include "test_util.hpp"

using namespace i2i;
using i2i::testing::project;
using i2i::testing::random_tensor;

namespace {

// Networks reduced to pass-throughs: the content code is the image itself,
// the decoder returns the content code, the style encoder returns a fixed
// code, and the discriminator answers with a constant or a sign test.
struct StubModel {
  Tensor<double> style;
  double d_value = 0.5;
  bool sign_discriminator = false;

  Tensor<double> encode_content(const Tensor<double>& x, Domain) const { return x; }
  Tensor<double> encode_style(const Tensor<double>&, Domain) const { return style; }
  Tensor<double> decode(const Tensor<double>& c, const Tensor<double>&, Domain) const { return c; }
  Tensor<double> discriminate(const Tensor<double>& x, Domain) const {
    if (sign_discriminator) return Tensor<double>::full(Shape{1, 1, 1, 1}, x.at(0) > 0 ? 1.0 : 0.0);
    return Tensor<double>::full(Shape{1, 1, 2, 2}, d_value);
  }
};

ModelConfig toy_config(std::uint64_t seed = 5) {
  ModelConfig c;
  c.image_size = 8;
  c.base_channels = 2;
  c.style_dim = 3;
  c.residual_blocks = 1;
  c.mlp_dim = 4;
  c.upsample_kernel = 3;
  c.seed = seed;
  return c;
}

struct Fixture {
  TranslationModel<double> model = build_model<double>(toy_config());
  Rng rng{17};
  Tensor<double> x1 = random_tensor(Shape{1, 3, 8, 8}, rng);
  Tensor<double> x2 = random_tensor(Shape{1, 3, 8, 8}, rng);
  Tensor<double> s1 = model.sample_style(rng);
  Tensor<double> s2 = model.sample_style(rng);

  Fixture() {
    for (auto& p : model.named_parameters()) {
      if (p.name.ends_with("gamma")) p.tensor.mutable_values()[0] = 0.5;
    }
  }
};

}  // namespace

TEST_CASE("identity stub reconstructs exactly") {
  Rng rng(1);
  const StubModel stub{random_tensor(Shape{1, 4}, rng)};
  const auto x = random_tensor(Shape{1, 3, 4, 4}, rng);
  CHECK(image_recon_loss(x, stub, Domain::One).item() == 0.0);
  const auto terms = latent_recon_losses(x, stub.style, stub, Domain::Two);
  CHECK(terms.content.item() == 0.0);
  CHECK(terms.style.item() == 0.0);
}

TEST_CASE("adversarial terms for a constant 0.5 discriminator") {
  Rng rng(2);
  const StubModel stub{random_tensor(Shape{1, 4}, rng)};
  const auto real = random_tensor(Shape{1, 3, 4, 4}, rng), fake = random_tensor(Shape{1, 3, 4, 4}, rng);
  CHECK(adversarial_loss_d(real, fake, stub, Domain::Two).item() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(adversarial_loss_g(fake, stub, Domain::Two).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(adversarial_loss_g(fake, stub, Domain::Two, GanForm::Saturating).item() ==
        doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("a perfect discriminator has near-zero loss despite saturated outputs") {
  StubModel stub{Tensor<double>::zeros(Shape{1, 2})};
  stub.sign_discriminator = true;
  const auto real = Tensor<double>::full(Shape{1, 3, 4, 4}, 1.0);
  const auto fake = Tensor<double>::full(Shape{1, 3, 4, 4}, -1.0);
  const double d = adversarial_loss_d(real, fake, stub, Domain::One).item();
  CHECK(d >= 0.0);
  CHECK(d < 1e-6);
  // Generator facing the same discriminator: large but finite.
  const double g = adversarial_loss_g(fake, stub, Domain::One).item();
  CHECK(g == doctest::Approx(-std::log(kLogClamp)).epsilon(1e-9));
}

TEST_CASE("image reconstruction matches recomposition") {
  Fixture f;
  for (const Domain d : {Domain::One, Domain::Two}) {
    const auto& x = d == Domain::One ? f.x1 : f.x2;
    const double loss = image_recon_loss(x, f.model, d).item();
    const auto codes = f.model.encode(x, d);
    const auto y = f.model.decode(codes.content, codes.style, d);
    double acc = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) acc += std::abs(y.at(i) - x.at(i));
    CHECK(loss == doctest::Approx(acc / x.numel()).epsilon(1e-12));
    CHECK(loss >= 0.0);
  }
}

TEST_CASE("latent reconstruction matches recomposition") {
  Fixture f;
  const auto c1 = f.model.encode_content(f.x1, Domain::One);
  const auto terms = latent_recon_losses(c1, f.s2, f.model, Domain::Two);
  const auto x12 = f.model.decode(c1, f.s2, Domain::Two);
  const auto c_back = f.model.encode_content(x12, Domain::Two);
  const auto s_back = f.model.encode_style(x12, Domain::Two);
  double ac = 0, as = 0;
  for (std::size_t i = 0; i < c1.numel(); ++i) ac += std::abs(c_back.at(i) - c1.at(i));
  for (std::size_t i = 0; i < f.s2.numel(); ++i) as += std::abs(s_back.at(i) - f.s2.at(i));
  CHECK(terms.content.item() == doctest::Approx(ac / c1.numel()).epsilon(1e-12));
  CHECK(terms.style.item() == doctest::Approx(as / f.s2.numel()).epsilon(1e-12));
  CHECK(terms.content.item() >= 0.0);
  CHECK(terms.style.item() >= 0.0);
}

TEST_CASE("full objective recomposes term by term") {
  Fixture f;
  const LossWeights w;
  const auto obj = full_objective(f.model, f.x1, f.x2, f.s1, f.s2, w);
  const auto& r = obj.report;

  CHECK(r.image_recon[0] == image_recon_loss(f.x1, f.model, Domain::One).item());
  CHECK(r.image_recon[1] == image_recon_loss(f.x2, f.model, Domain::Two).item());
  const auto l12 = latent_recon_losses(f.model.encode_content(f.x1, Domain::One), f.s2, f.model, Domain::Two);
  const auto l21 = latent_recon_losses(f.model.encode_content(f.x2, Domain::Two), f.s1, f.model, Domain::One);
  CHECK(r.content_recon[0] == l12.content.item());
  CHECK(r.style_recon[0] == l12.style.item());
  CHECK(r.content_recon[1] == l21.content.item());
  CHECK(r.style_recon[1] == l21.style.item());
  CHECK(r.gan[0] == adversarial_loss_g(f.model.translate(f.x1, f.s2, Domain::One), f.model, Domain::Two).item());
  CHECK(r.gan[1] == adversarial_loss_g(f.model.translate(f.x2, f.s1, Domain::Two), f.model, Domain::One).item());

  const double expected = r.gan[0] + r.gan[1] + 10 * (r.image_recon[0] + r.image_recon[1]) +
                          (r.content_recon[0] + r.content_recon[1]) + (r.style_recon[0] + r.style_recon[1]);
  CHECK(r.total == doctest::Approx(expected).epsilon(1e-12));
  CHECK(obj.total.item() == doctest::Approx(r.total).epsilon(1e-6));
  for (const auto& [name, value] : r.fields()) {
    CAPTURE(name);
    if (name != "gan_d") CHECK(value >= 0.0);
  }
}

TEST_CASE("zero weights leave only the adversarial terms") {
  Fixture f;
  const auto obj = full_objective(f.model, f.x1, f.x2, f.s1, f.s2, LossWeights{0, 0, 0});
  CHECK(obj.report.total == obj.report.gan[0] + obj.report.gan[1]);
  CHECK(obj.total.item() == doctest::Approx(obj.report.total).epsilon(1e-12));
}

TEST_CASE("total is linear in the image weight") {
  Fixture f;
  const auto a = full_objective(f.model, f.x1, f.x2, f.s1, f.s2, LossWeights{10, 1, 1}).report;
  const auto b = full_objective(f.model, f.x1, f.x2, f.s1, f.s2, LossWeights{20, 1, 1}).report;
  const double recon = a.image_recon[0] + a.image_recon[1];
  CHECK(b.total - a.total == doctest::Approx(10 * recon).epsilon(1e-10));
  CHECK(LossWeights{20, 1, 1}.image * recon == 2 * (LossWeights{10, 1, 1}.image * recon));
}

TEST_CASE("negative weights are rejected") {
  Fixture f;
  CHECK_THROWS_AS(full_objective(f.model, f.x1, f.x2, f.s1, f.s2, LossWeights{-1, 1, 1}), ConfigError);
}

TEST_CASE("objective is symmetric in the domain labels") {
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    const auto model = build_model<float>(toy_config(seed));
    Rng rng(seed);
    const auto x1 = random_tensor<float>(Shape{1, 3, 8, 8}, rng), x2 = random_tensor<float>(Shape{1, 3, 8, 8}, rng);
    const auto s1 = model.sample_style(rng), s2 = model.sample_style(rng);
    const auto a = full_objective(model, x1, x2, s1, s2, LossWeights{}).report;
    const auto b = full_objective(model.swapped(), x2, x1, s2, s1, LossWeights{}).report;
    CHECK(a.total == b.total);
    CHECK(a.image_recon[0] == b.image_recon[1]);
    CHECK(a.gan[1] == b.gan[0]);
  }
}

TEST_CASE("adversarial gradients pass finite differences") {
  Fixture f;
  GradCheckOptions opt;
  opt.max_coords_per_input = 40;
  auto fake = f.x1;
  const auto g = check_gradients(
      "generator adversarial", [&] { return adversarial_loss_g(fake, f.model, Domain::Two); }, {fake}, opt);
  CHECK_MESSAGE(g.passed(), "err=", g.max_rel_error);
  const auto sat = check_gradients(
      "saturating adversarial",
      [&] { return adversarial_loss_g(fake, f.model, Domain::Two, GanForm::Saturating); }, {fake}, opt);
  CHECK_MESSAGE(sat.passed(), "err=", sat.max_rel_error);
  auto real = f.x2;
  const auto d = check_gradients(
      "discriminator adversarial", [&] { return adversarial_loss_d(real, fake, f.model, Domain::Two); },
      {real, fake}, opt);
  CHECK_MESSAGE(d.passed(), "err=", d.max_rel_error);
}

TEST_CASE("full objective gradient passes finite differences") {
  Fixture f;
  GradCheckOptions opt;
  opt.max_coords_per_input = 3;
  // Deep composite: near-constant 2x2 instance-norm planes give third
  // derivatives large enough that a 1e-5 central difference carries ~1e-4
  // truncation error on a few coordinates.
  opt.step = 2e-6;
  std::vector<Tensor<double>> inputs{f.x1, f.x2};
  for (const auto& p : f.model.generator_parameters()) inputs.push_back(p.tensor);
  const auto r = check_gradients(
      "full objective", [&] { return full_objective(f.model, f.x1, f.x2, f.s1, f.s2, LossWeights{}).total; },
      inputs, opt);
  CHECK_MESSAGE(r.passed(), "err=", r.max_rel_error, " kinks=", r.skipped_kinks);
}

TEST_CASE("freezing the discriminator keeps its gradients absent") {
  Fixture f;
  {
    FreezeGuard<double> freeze(f.model.discriminator_parameters());
    Tape tape;
    backward(full_objective(f.model, f.x1, f.x2, f.s1, f.s2, LossWeights{}).total);
  }
  for (const auto& p : f.model.discriminator_parameters()) {
    CHECK_FALSE(p.tensor.has_grad());
    CHECK(p.tensor.requires_grad());
  }
  std::size_t with_grad = 0;
  for (const auto& p : f.model.generator_parameters()) with_grad += p.tensor.has_grad();
  CHECK(with_grad > 0);
}
