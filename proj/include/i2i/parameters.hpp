#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "i2i/rng.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

template <typename T>
void append_prefixed(ParameterList<T>& out, const std::string& prefix, const ParameterList<T>& items) {
  for (const auto& item : items) out.push_back({prefix + item.name, item.tensor});
}

/// Trainable tensor drawn from N(0, 2 / fan_in).
template <typename T>
Tensor<T> kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.normal() * std_dev);
  return Tensor<T>(std::move(shape), std::move(values), true);
}

template <typename T>
Tensor<T> trainable_zeros(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

template <typename T>
Tensor<T> trainable_ones(Shape shape) {
  return Tensor<T>::full(std::move(shape), T(1), true);
}

}  // namespace i2i
