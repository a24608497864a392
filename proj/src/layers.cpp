#include "i2i/layers.hpp"

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"

namespace i2i {

template <typename T>
Conv2dLayer<T>::Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t stride, std::size_t pad, Rng& rng, bool with_bias)
    : stride_(stride), pad_(pad) {
  weight_ = kaiming_normal<T>(Shape{out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
  if (with_bias) bias_ = trainable_zeros<T>(Shape{out_channels});
}

template <typename T>
Tensor<T> Conv2dLayer<T>::operator()(const Tensor<T>& x) const {
  return conv2d(x, weight_, bias_, stride_, pad_);
}

template <typename T>
ParameterList<T> Conv2dLayer<T>::parameters() const {
  ParameterList<T> out{{"weight", weight_}};
  if (bias_.defined()) out.push_back({"bias", bias_});
  return out;
}

template <typename T>
LinearLayer<T>::LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng) {
  weight_ = kaiming_normal<T>(Shape{out_features, in_features}, in_features, rng);
  bias_ = trainable_zeros<T>(Shape{out_features});
}

template <typename T>
Tensor<T> LinearLayer<T>::operator()(const Tensor<T>& x) const {
  return linear(x, weight_, bias_);
}

template <typename T>
ParameterList<T> LinearLayer<T>::parameters() const {
  return {{"weight", weight_}, {"bias", bias_}};
}

template <typename T>
InstanceNormLayer<T>::InstanceNormLayer(std::size_t channels)
    : weight_(trainable_ones<T>(Shape{channels})), bias_(trainable_zeros<T>(Shape{channels})) {}

template <typename T>
Tensor<T> InstanceNormLayer<T>::operator()(const Tensor<T>& x) const {
  return instance_norm(x, weight_, bias_);
}

template <typename T>
ParameterList<T> InstanceNormLayer<T>::parameters() const {
  return {{"weight", weight_}, {"bias", bias_}};
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t channels, Rng& rng)
    : conv1_(channels, channels, 3, 1, 1, rng, false),
      conv2_(channels, channels, 3, 1, 1, rng, false),
      norm1_(channels),
      norm2_(channels) {}

template <typename T>
Tensor<T> ResidualBlock<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> h = relu(norm1_(conv1_(x)));
  return add(x, norm2_(conv2_(h)));
}

template <typename T>
ParameterList<T> ResidualBlock<T>::parameters() const {
  ParameterList<T> out;
  append_prefixed(out, "conv1.", conv1_.parameters());
  append_prefixed(out, "norm1.", norm1_.parameters());
  append_prefixed(out, "conv2.", conv2_.parameters());
  append_prefixed(out, "norm2.", norm2_.parameters());
  return out;
}

template <typename T>
AdaptiveResidualBlock<T>::AdaptiveResidualBlock(std::size_t channels, Rng& rng)
    : channels_(channels),
      conv1_(channels, channels, 3, 1, 1, rng, false),
      conv2_(channels, channels, 3, 1, 1, rng, false) {}

template <typename T>
Tensor<T> AdaptiveResidualBlock<T>::operator()(const Tensor<T>& x, const Tensor<T>& style) const {
  if (style.rank() != 2 || style.dim(1) != style_width() || style.dim(0) != x.dim(0)) {
    throw DimensionError("adaptive residual block: style parameters " + shape_str(style.shape()) +
                         " do not match " + std::to_string(style_width()) + " columns");
  }
  const std::size_t c = channels_;
  // Scales are offsets from 1 so a zero style signal leaves the normalized features unchanged.
  const Tensor<T> scale1 = add_scalar(slice_columns(style, 0, c), 1.0);
  const Tensor<T> shift1 = slice_columns(style, c, c);
  const Tensor<T> scale2 = add_scalar(slice_columns(style, 2 * c, c), 1.0);
  const Tensor<T> shift2 = slice_columns(style, 3 * c, c);
  const Tensor<T> h = relu(adaptive_instance_norm(conv1_(x), scale1, shift1));
  return add(x, adaptive_instance_norm(conv2_(h), scale2, shift2));
}

template <typename T>
ParameterList<T> AdaptiveResidualBlock<T>::parameters() const {
  ParameterList<T> out;
  append_prefixed(out, "conv1.", conv1_.parameters());
  append_prefixed(out, "conv2.", conv2_.parameters());
  return out;
}

template class Conv2dLayer<float>;
template class Conv2dLayer<double>;
template class LinearLayer<float>;
template class LinearLayer<double>;
template class InstanceNormLayer<float>;
template class InstanceNormLayer<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class AdaptiveResidualBlock<float>;
template class AdaptiveResidualBlock<double>;

}  // namespace i2i
