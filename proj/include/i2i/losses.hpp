#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "i2i/errors.hpp"
#include "i2i/networks.hpp"
#include "i2i/ops.hpp"
#include "i2i/parameters.hpp"
#include "i2i/tensor.hpp"

// Loss terms of the two-domain translation objective. The functions are
// templates over the model so tests can substitute stub networks; any type
// with encode_content / encode_style / decode / discriminate in the shape of
// TranslationModel works.

namespace i2i {

struct LossWeights {
  double image = 10.0;    // lambda_x
  double content = 1.0;   // lambda_c
  double style = 1.0;     // lambda_s

  void validate() const {
    if (!(image >= 0 && content >= 0 && style >= 0)) throw ConfigError("loss weights must be non-negative");
  }
};

// Generator adversarial term: -log D(fake) by default, or the minimax
// log(1 - D(fake)).
enum class GanForm { NonSaturating, Saturating };

inline constexpr double kLogClamp = 1e-7;

/// Per-term values of one evaluation of the objective. Index 0 holds the
/// terms of the path that starts in domain one (x1 reconstruction, the 1->2
/// translation's latent and adversarial terms), index 1 its mirror.
struct LossReport {
  std::array<double, 2> image_recon{};
  std::array<double, 2> content_recon{};
  std::array<double, 2> style_recon{};
  std::array<double, 2> gan{};
  double total = 0.0;
  // Discriminator objective of the same step; not part of total.
  double discriminator = 0.0;

  double weighted_total(const LossWeights& w) const {
    // Pairs are summed first so that exchanging the two directions leaves the
    // result bit-identical.
    return (gan[0] + gan[1]) + w.image * (image_recon[0] + image_recon[1]) +
           w.content * (content_recon[0] + content_recon[1]) + w.style * (style_recon[0] + style_recon[1]);
  }

  /// (name, value) pairs in a fixed order, as written to the training log.
  std::vector<std::pair<std::string, double>> fields() const {
    return {{"recon_x1", image_recon[0]}, {"recon_x2", image_recon[1]},   {"recon_c1", content_recon[0]},
            {"recon_c2", content_recon[1]}, {"recon_s2", style_recon[0]}, {"recon_s1", style_recon[1]},
            {"gan_g2", gan[0]},              {"gan_g1", gan[1]},           {"total", total},
            {"gan_d", discriminator}};
  }
};

/// mean |G(E^c(x), E^s(x)) - x| within one domain.
template <typename T, typename Model>
Tensor<T> image_recon_loss(const Tensor<T>& x, const Model& model, Domain domain) {
  const Tensor<T> content = model.encode_content(x, domain);
  const Tensor<T> style = model.encode_style(x, domain);
  return l1_norm(model.decode(content, style, domain), x);
}

template <typename T>
struct LatentTerms {
  Tensor<T> content;
  Tensor<T> style;
};

/// Decode (content, style) in `target`, re-encode there, and compare both
/// codes with the originals.
template <typename T, typename Model>
LatentTerms<T> latent_recon_losses(const Tensor<T>& content, const Tensor<T>& style, const Model& model,
                                   Domain target) {
  const Tensor<T> translated = model.decode(content, style, target);
  return {l1_norm(model.encode_content(translated, target), content),
          l1_norm(model.encode_style(translated, target), style)};
}

/// -mean log(clamp(p)) or -mean log(1 - clamp(p)).
template <typename T>
Tensor<T> clamped_log_loss(const Tensor<T>& p, bool complement) {
  const Tensor<T> q = clamp(p, kLogClamp, 1.0 - kLogClamp);
  const Tensor<T> arg = complement ? add_scalar(scale(q, -1.0), 1.0) : q;
  return scale(mean(log(arg)), -1.0);
}

template <typename T, typename Model>
Tensor<T> adversarial_loss_g(const Tensor<T>& fake, const Model& model, Domain domain,
                             GanForm form = GanForm::NonSaturating) {
  const Tensor<T> p = model.discriminate(fake, domain);
  if (form == GanForm::NonSaturating) return clamped_log_loss(p, false);
  // Minimized by the generator: mean log(1 - D(fake)).
  return scale(clamped_log_loss(p, true), -1.0);
}

template <typename T, typename Model>
Tensor<T> adversarial_loss_d(const Tensor<T>& real, const Tensor<T>& fake, const Model& model, Domain domain) {
  return add(clamped_log_loss(model.discriminate(real, domain), false),
             clamped_log_loss(model.discriminate(fake, domain), true));
}

template <typename T>
struct Objective {
  Tensor<T> total;
  LossReport report;
  // x12 = G2(E1c(x1), s2) and x21 = G1(E2c(x2), s1).
  Tensor<T> x12, x21;
};

/// Full bidirectional objective for one sample per domain. s1 and s2 are
/// style codes drawn from the prior.
/// Evaluates one loss term, turning any NumericError raised while computing it
/// (or a non-finite result) into one that names the term.
template <typename F>
auto named_term(const char* name, F&& compute) {
  try {
    auto value = compute();
    if (!std::isfinite(static_cast<double>(value.item()))) throw NumericError("value is not finite");
    return value;
  } catch (const NumericError& e) {
    throw NumericError(std::string("loss term ") + name + ": " + e.what());
  }
}

template <typename T, typename Model>
Objective<T> full_objective(const Model& model, const Tensor<T>& x1, const Tensor<T>& x2, const Tensor<T>& s1,
                            const Tensor<T>& s2, const LossWeights& weights,
                            GanForm form = GanForm::NonSaturating) {
  weights.validate();
  const std::array<Domain, 2> domains = {Domain::One, Domain::Two};
  const std::array<const Tensor<T>*, 2> images = {&x1, &x2};
  const std::array<const Tensor<T>*, 2> prior = {&s1, &s2};

  Objective<T> out;
  std::array<Tensor<T>, 2> recon, content, style, gan;
  static constexpr const char* kNames[2][4] = {{"recon_x1", "recon_c1", "recon_s2", "gan_g2"},
                                                {"recon_x2", "recon_c2", "recon_s1", "gan_g1"}};
  for (std::size_t i = 0; i < 2; ++i) {
    const Domain src = domains[i], dst = other(src);
    const Tensor<T>& x = *images[i];
    const Tensor<T>& target_style = *prior[1 - i];
    Tensor<T> c, translated;
    recon[i] = named_term(kNames[i][0], [&] {
      c = model.encode_content(x, src);
      return l1_norm(model.decode(c, model.encode_style(x, src), src), x);
    });
    content[i] = named_term(kNames[i][1], [&] {
      translated = model.decode(c, target_style, dst);
      return l1_norm(model.encode_content(translated, dst), c);
    });
    style[i] = named_term(kNames[i][2], [&] { return l1_norm(model.encode_style(translated, dst), target_style); });
    gan[i] = named_term(kNames[i][3], [&] { return adversarial_loss_g(translated, model, dst, form); });
    (i == 0 ? out.x12 : out.x21) = translated;
  }

  auto weighted = [](const std::array<Tensor<T>, 2>& pair, double w) { return scale(add(pair[0], pair[1]), w); };
  out.total = add(add(add(add(gan[0], gan[1]), weighted(recon, weights.image)), weighted(content, weights.content)),
                  weighted(style, weights.style));

  for (std::size_t i = 0; i < 2; ++i) {
    out.report.image_recon[i] = static_cast<double>(recon[i].item());
    out.report.content_recon[i] = static_cast<double>(content[i].item());
    out.report.style_recon[i] = static_cast<double>(style[i].item());
    out.report.gan[i] = static_cast<double>(gan[i].item());
  }
  out.report.total = out.report.weighted_total(weights);
  return out;
}

/// Discriminator objective for both domains given already-translated fakes.
template <typename T, typename Model>
Tensor<T> discriminator_objective(const Model& model, const Tensor<T>& x1, const Tensor<T>& x2,
                                  const Tensor<T>& x12, const Tensor<T>& x21) {
  return add(adversarial_loss_d(x2, x12, model, Domain::Two), adversarial_loss_d(x1, x21, model, Domain::One));
}

/// Suspends gradient accumulation into a parameter set for its lifetime.
template <typename T>
class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterList<T> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      saved_.push_back(p.tensor.requires_grad());
      p.tensor.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.set_requires_grad(saved_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterList<T> params_;
  std::vector<bool> saved_;
};

}  // namespace i2i
