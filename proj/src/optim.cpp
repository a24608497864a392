#include "i2i/optim.hpp"

#include <algorithm>
#include <cmath>

#include "i2i/errors.hpp"

namespace i2i {

void AdamConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(epsilon > 0)) throw ConfigError("Adam epsilon must be positive");
}

template <typename T>
Adam<T>::Adam(ParameterList<T> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), T(0));
    v_.emplace_back(p.tensor.numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("Adam step: parameter '" + p.name + "' has no gradient");
  }
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<T> param = params_[k].tensor;
    auto values = param.mutable_values();
    const auto grad = param.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + config_.epsilon);
      values[i] = static_cast<T>(values[i] - update);
    }
    require_finite<T>(values, ("Adam update of " + params_[k].name).c_str());
    param.clear_grad();
  }
}

void Schedule::validate() const {
  if (!(base_lr > 0)) throw ConfigError("learning rate must be positive");
  if (halve_every == 0) throw ConfigError("halve_every must be positive");
}

double Schedule::lr(std::uint64_t step) const {
  // Scaling by an exact power of two keeps lr(t) equal to the closed form bit for bit.
  const auto halvings = static_cast<int>(std::min<std::uint64_t>(step / halve_every, 2000));
  return std::ldexp(base_lr, -halvings);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace i2i
