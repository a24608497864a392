#pragma once

#include <cstddef>

#include "i2i/parameters.hpp"
#include "i2i/rng.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

template <typename T>
class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
              std::size_t pad, Rng& rng, bool with_bias = true);

  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;

  std::size_t out_channels() const { return weight_.dim(0); }

 private:
  Tensor<T> weight_, bias_;
  std::size_t stride_ = 1, pad_ = 0;
};

template <typename T>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;

 private:
  Tensor<T> weight_, bias_;
};

/// Instance normalization with a learned per-channel affine.
template <typename T>
class InstanceNormLayer {
 public:
  InstanceNormLayer() = default;
  explicit InstanceNormLayer(std::size_t channels);

  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;

 private:
  Tensor<T> weight_, bias_;
};

// conv3x3 -> IN -> relu -> conv3x3 -> IN, plus identity skip.
template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t channels, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  ParameterList<T> parameters() const;

 private:
  Conv2dLayer<T> conv1_, conv2_;
  InstanceNormLayer<T> norm1_, norm2_;
};

// Residual block whose normalizations take their scale/shift from a style
// code (adaptive instance norm).
template <typename T>
class AdaptiveResidualBlock {
 public:
  AdaptiveResidualBlock() = default;
  AdaptiveResidualBlock(std::size_t channels, Rng& rng);

  /// style holds [scale1 | shift1 | scale2 | shift2], each `channels` wide.
  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& style) const;
  ParameterList<T> parameters() const;

  std::size_t style_width() const { return 4 * channels_; }

 private:
  std::size_t channels_ = 0;
  Conv2dLayer<T> conv1_, conv2_;
};

}  // namespace i2i
