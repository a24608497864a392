#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "i2i/tensor.hpp"

namespace i2i {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error, so that near-zero gradient
  // entries are compared on an absolute scale of floor * tolerance.
  double magnitude_floor = 1e-4;
  // Coordinates checked per input tensor; 0 checks every coordinate.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates whose +/- step evaluations took different branches of a
  // piecewise op; the function is not differentiable across them.
  std::size_t skipped_kinks = 0;
  double tolerance = 0.0;

  bool passed() const {
    return checked > 0 && max_rel_error < tolerance && skipped_kinks * 20 <= checked;
  }
};

/// Compares reverse-mode gradients of `loss_fn` with respect to `inputs`
/// against central finite differences. `loss_fn` must rebuild its graph from
/// the current values of `inputs` on every call.
GradCheckResult check_gradients(const std::string& name,
                                const std::function<Tensor<double>()>& loss_fn,
                                std::vector<Tensor<double>> inputs,
                                const GradCheckOptions& options = {});

/// The full finite-difference suite: tensor ops, attention block, the four
/// networks on an 8x8 toy model and every loss term, for each seed.
std::vector<GradCheckResult> run_gradient_suite(const std::vector<std::uint64_t>& seeds);

}  // namespace i2i
