#include <functional>
#include <utility>

#include "i2i/attention.hpp"
#include "i2i/gradcheck.hpp"
#include "i2i/losses.hpp"
#include "i2i/networks.hpp"
#include "i2i/ops.hpp"

namespace i2i {

namespace {

using T2 = Tensor<double>;

T2 rand_t(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T2(std::move(shape), std::move(v));
}

T2 project(const T2& out, const T2& w) { return sum(mul(out, w)); }

class Suite {
 public:
  Suite(std::uint64_t seed, std::vector<GradCheckResult>& out) : seed_(seed), rng_(derive_seed(seed, 0x6772)), out_(out) {}

  void run(const std::string& name, const std::function<T2()>& loss, std::vector<T2> inputs,
           GradCheckOptions opt = {}) {
    opt.seed = seed_;
    GradCheckResult r = check_gradients(name, loss, std::move(inputs), opt);
    r.name = name + " (seed " + std::to_string(seed_) + ")";
    out_.push_back(std::move(r));
  }

  // Checks project(op(x), p) for one random input of `shape`.
  void unary(const std::string& name, Shape shape, const std::function<T2(const T2&)>& op, double lo = -2,
             double hi = 2) {
    const T2 x = rand_t(shape, rng_, lo, hi);
    const T2 p = rand_t(op(x).shape(), rng_);
    run(name, [=] { return project(op(x), p); }, {x});
  }

  void ops() {
    {
      const T2 a = rand_t({3, 4}, rng_), b = rand_t({4, 2}, rng_), w = rand_t({3, 2}, rng_);
      run("matmul", [=] { return project(matmul(a, b), w); }, {a, b});
    }
    for (int mode = 0; mode < 4; ++mode) {
      const bool ta = mode & 1, tb = mode & 2;
      const T2 a = rand_t(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, rng_);
      const T2 b = rand_t(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, rng_);
      const T2 w = rand_t({2, 3, 5}, rng_);
      run("bmm" + std::string(ta ? "_ta" : "") + (tb ? "_tb" : ""), [=] { return project(bmm(a, b, ta, tb), w); },
          {a, b});
    }
    {
      const T2 x = rand_t({2, 5}, rng_), w = rand_t({3, 5}, rng_), b = rand_t({3}, rng_), p = rand_t({2, 3}, rng_);
      run("linear", [=] { return project(linear(x, w, b), p); }, {x, w, b});
    }
    {
      const T2 x = rand_t({2, 3, 8, 8}, rng_), w = rand_t({4, 3, 3, 3}, rng_), b = rand_t({4}, rng_);
      const T2 p = rand_t({2, 4, 4, 4}, rng_);
      run("conv2d", [=] { return project(conv2d(x, w, b, 2, 1), p); }, {x, w, b});
      const T2 w4 = rand_t({2, 3, 4, 4}, rng_), p4 = rand_t({2, 2, 4, 4}, rng_);
      run("conv2d_4x4_stride2", [=] { return project(conv2d(x, w4, 2, 1), p4); }, {x, w4});
    }
    unary("relu", {3, 4}, [](const T2& x) { return relu(x); });
    unary("leaky_relu", {3, 4}, [](const T2& x) { return leaky_relu(x, 0.2); });
    unary("tanh", {3, 4}, [](const T2& x) { return tanh(x); });
    unary("sigmoid", {3, 4}, [](const T2& x) { return sigmoid(x); });
    unary("abs", {3, 4}, [](const T2& x) { return abs(x); });
    unary("clamp", {3, 4}, [](const T2& x) { return clamp(x, -0.5, 0.5); });
    unary("scale", {3, 4}, [](const T2& x) { return scale(x, -2.5); });
    unary("add_scalar", {3, 4}, [](const T2& x) { return add_scalar(x, 0.75); });
    unary("log", {3, 4}, [](const T2& x) { return log(x); }, 0.2, 3.0);
    unary("softmax", {5, 7}, [](const T2& x) { return softmax(x, 1); });
    unary("upsample_nearest2x", {1, 2, 3, 3}, [](const T2& x) { return upsample_nearest2x(x); });
    unary("global_avg_pool", {2, 3, 3, 3}, [](const T2& x) { return global_avg_pool(x); });
    unary("slice_reshape", {2, 6}, [](const T2& x) { return reshape(slice_columns(x, 1, 2), Shape{2, 1, 2}); });
    const std::vector<std::pair<const char*, std::function<T2(const T2&, const T2&)>>> binary = {
        {"add", [](const T2& a, const T2& b) { return add(a, b); }},
        {"sub", [](const T2& a, const T2& b) { return sub(a, b); }},
        {"mul", [](const T2& a, const T2& b) { return mul(a, b); }},
        {"div", [](const T2& a, const T2& b) { return div(a, b); }},
    };
    for (const auto& [name, op] : binary) {
      const T2 a = rand_t({3, 4}, rng_, -2, 2), b = rand_t({3, 4}, rng_, 0.5, 2), s = rand_t({1}, rng_, 0.5, 2);
      const T2 p = rand_t({3, 4}, rng_);
      run(name, [=, op = op] { return project(op(a, b), p); }, {a, b});
      run(std::string(name) + "_broadcast", [=, op = op] { return add(project(op(a, s), p), project(op(s, a), p)); },
          {a, s});
    }
    {
      const T2 x = rand_t({3, 4}, rng_);
      run("sum", [=] { return sum(x); }, {x});
      run("mean", [=] { return mean(mul(x, x)); }, {x});
      const T2 y = rand_t({3, 4}, rng_);
      run("l1_norm", [=] { return l1_norm(x, y); }, {x, y});
    }
    {
      const T2 x = rand_t({2, 3, 4, 4}, rng_), p = rand_t({2, 3, 4, 4}, rng_);
      const T2 w = rand_t({3}, rng_, 0.5, 1.5), b = rand_t({3}, rng_);
      run("instance_norm", [=] { return project(instance_norm(x, w, b), p); }, {x, w, b});
      const T2 s = rand_t({2, 3}, rng_), t = rand_t({2, 3}, rng_);
      run("adaptive_instance_norm", [=] { return project(adaptive_instance_norm(x, s, t), p); }, {x, s, t});
    }
  }

  void attention() {
    AttentionBlock<double> block(8, rng_);
    block.gamma().mutable_values()[0] = rng_.uniform(0.5, 1.5);
    const T2 x = rand_t({1, 8, 3, 3}, rng_), p = rand_t({1, 8, 3, 3}, rng_);
    run("attention_block", [&block, x, p] { return project(attention_forward(x, block), p); },
        {x, block.w_f(), block.w_g(), block.w_h(), block.gamma()});
  }

  void networks_and_losses() {
    for (const Variant variant : {Variant::DsUs, Variant::Ds3Us3}) {
      ModelConfig c;
      c.image_size = 8;
      c.base_channels = 2;
      c.style_dim = 3;
      c.residual_blocks = 1;
      c.mlp_dim = 4;
      c.upsample_kernel = 3;
      c.placement.variant = variant;
      c.seed = seed_;
      const auto model = build_model<double>(c);
      // Open the attention gates so the attention paths carry gradient.
      for (auto& p : model.named_parameters()) {
        if (p.name.ends_with("gamma")) p.tensor.mutable_values()[0] = 0.6;
      }
      const std::string tag = std::string(variant_name(variant)) + " ";
      GradCheckOptions opt;
      opt.max_coords_per_input = 6;

      const T2 x = rand_t({1, 3, 8, 8}, rng_), y = rand_t({1, 3, 8, 8}, rng_);
      const T2 s = model.sample_style(rng_);
      const T2 wc = rand_t({1, 8, 2, 2}, rng_), ws = rand_t({1, 3}, rng_), wy = rand_t({1, 3, 8, 8}, rng_);
      const T2 wd = rand_t({1, 1, 1, 1}, rng_);
      const T2 content = rand_t({1, 8, 2, 2}, rng_);

      auto with = [](T2 first, const ParameterList<double>& params, const std::string& prefix) {
        std::vector<T2> inputs{std::move(first)};
        for (const auto& p : params) {
          if (p.name.rfind(prefix, 0) == 0) inputs.push_back(p.tensor);
        }
        return inputs;
      };
      const auto gen = model.generator_parameters();
      run(tag + "content_encoder", [&] { return project(model.encode_content(x, Domain::One), wc); },
          with(x, gen, "domain1.content."), opt);
      run(tag + "style_encoder", [&] { return project(model.encode_style(x, Domain::One), ws); },
          with(x, gen, "domain1.style."), opt);
      {
        std::vector<T2> inputs = with(content, gen, "domain2.decoder.");
        inputs.push_back(s);
        run(tag + "decoder", [&] { return project(model.decode(content, s, Domain::Two), wy); }, inputs, opt);
      }
      run(tag + "discriminator", [&] { return project(model.discriminate(x, Domain::Two), wd); },
          with(x, model.discriminator_parameters(), "domain2."), opt);

      run(tag + "image_recon_loss", [&] { return image_recon_loss(x, model, Domain::One); },
          with(x, gen, "domain1."), opt);
      {
        const T2 s_target = model.sample_style(rng_);
        std::vector<T2> inputs = with(content, gen, "domain2.");
        inputs.push_back(s_target);
        run(tag + "latent_recon_losses", [&] {
          const auto terms = latent_recon_losses(content, s_target, model, Domain::Two);
          return add(terms.content, terms.style);
        }, inputs, opt);
      }
      const auto disc = model.discriminator_parameters();
      run(tag + "adversarial_g", [&] { return adversarial_loss_g(y, model, Domain::Two); },
          with(y, disc, "domain2."), opt);
      run(tag + "adversarial_g_saturating",
          [&] { return adversarial_loss_g(y, model, Domain::Two, GanForm::Saturating); }, with(y, disc, "domain2."),
          opt);
      {
        std::vector<T2> inputs = with(x, disc, "domain2.");
        inputs.push_back(y);
        run(tag + "adversarial_d", [&] { return adversarial_loss_d(x, y, model, Domain::Two); }, inputs, opt);
      }
      {
        GradCheckOptions deep = opt;
        deep.max_coords_per_input = 3;
        // Near-constant 2x2 instance-norm planes make the 1e-5 central
        // difference too coarse for this deep composite.
        deep.step = 2e-6;
        const T2 s1 = model.sample_style(rng_), s2 = model.sample_style(rng_);
        std::vector<T2> inputs{x, y};
        for (const auto& p : gen) inputs.push_back(p.tensor);
        run(tag + "full_objective", [&] { return full_objective(model, x, y, s1, s2, LossWeights{}).total; },
            inputs, deep);
      }
    }
  }

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<GradCheckResult>& out_;
};

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(const std::vector<std::uint64_t>& seeds) {
  std::vector<GradCheckResult> results;
  for (const std::uint64_t seed : seeds) {
    Suite suite(seed, results);
    suite.ops();
    suite.attention();
    suite.networks_and_losses();
  }
  return results;
}

}  // namespace i2i
