#include "i2i/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"

namespace i2i {

namespace {

struct Probe {
  double value;
  std::uint64_t branches;
};

Probe evaluate(const std::function<Tensor<double>()>& loss_fn) {
  NoGradGuard no_grad;
  BranchMonitor monitor;
  const Tensor<double> loss = loss_fn();
  return {loss.item(), monitor.fingerprint()};
}

}  // namespace

GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor<double>()>& loss_fn,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& options) {
  GradCheckResult result;
  result.name = name;
  result.tolerance = options.tolerance;

  std::vector<std::vector<double>> analytic;
  {
    for (auto& in : inputs) {
      in.set_requires_grad(true);
      in.clear_grad();
    }
    Tape tape;
    const Tensor<double> loss = loss_fn();
    tape.backward(loss);
    for (auto& in : inputs) {
      if (in.has_grad()) {
        analytic.emplace_back(in.grad().begin(), in.grad().end());
      } else {
        analytic.emplace_back(in.numel(), 0.0);
      }
      in.clear_grad();
    }
  }

  Rng rng(options.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_values();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && coords.size() > options.max_coords_per_input) {
      for (std::size_t i = 0; i < options.max_coords_per_input; ++i) {
        std::swap(coords[i], coords[i + rng.uniform_int(coords.size() - i)]);
      }
      coords.resize(options.max_coords_per_input);
    }
    for (const std::size_t i : coords) {
      const double original = values[i];
      values[i] = original + options.step;
      const Probe plus = evaluate(loss_fn);
      values[i] = original - options.step;
      const Probe minus = evaluate(loss_fn);
      values[i] = original;
      if (plus.branches != minus.branches) {
        ++result.skipped_kinks;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * options.step);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      result.max_rel_error = std::max(result.max_rel_error, std::abs(a - numeric) / denom);
      ++result.checked;
    }
  }
  return result;
}

}  // namespace i2i
