#pragma once

#include <cstdint>
#include <vector>

#include "i2i/parameters.hpp"

namespace i2i {

struct AdamConfig {
  double beta1 = 0.05;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const;
};

// Bias-corrected Adam over a fixed parameter list. step() consumes and
// clears the gradients of every parameter.
template <typename T>
class Adam {
 public:
  Adam(ParameterList<T> params, AdamConfig config = {});

  /// Throws ContractError (before touching anything) if a parameter has no gradient.
  void step(double lr);

  std::uint64_t steps() const { return steps_; }
  const ParameterList<T>& parameters() const { return params_; }
  const AdamConfig& config() const { return config_; }

  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t steps) { steps_ = steps; }

 private:
  ParameterList<T> params_;
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Step decay: lr(t) = base_lr * 0.5^floor(t / halve_every).
struct Schedule {
  double base_lr = 1e-4;
  std::uint64_t halve_every = 100000;

  void validate() const;
  double lr(std::uint64_t step) const;
};

}  // namespace i2i
