#include "i2i/attention.hpp"

#include <algorithm>
#include <cmath>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"

namespace i2i {

namespace {

template <typename T>
Tensor<T> unit_vector(std::size_t n, Rng& rng) {
  std::vector<T> v(n);
  double norm = 0;
  for (auto& x : v) {
    x = static_cast<T>(rng.normal());
    norm += static_cast<double>(x) * x;
  }
  norm = std::sqrt(std::max(norm, 1e-24));
  for (auto& x : v) x = static_cast<T>(x / norm);
  return Tensor<T>(Shape{n}, std::move(v));
}

void normalize_in_place(std::vector<double>& v) {
  double norm = 0;
  for (const double x : v) norm += x * x;
  norm = std::sqrt(std::max(norm, 1e-24));
  for (auto& x : v) x /= norm;
}

template <typename T>
Tensor<T> flatten_spatial(const Tensor<T>& features) {
  const Shape& s = features.shape();
  return reshape(features, Shape{s[0], s[1], s[2] * s[3]});
}

template <typename T>
void require_block_input(const Tensor<T>& x, const AttentionBlock<T>& block, const char* op) {
  if (!x.defined() || x.rank() != 4) throw DimensionError(std::string(op) + ": expected b x C x h x w input");
  if (x.dim(1) != block.channels()) {
    throw DimensionError(std::string(op) + ": input has " + std::to_string(x.dim(1)) +
                         " channels, block expects " + std::to_string(block.channels()));
  }
}

}  // namespace

template <typename T>
AttentionBlock<T>::AttentionBlock(std::size_t channels, Rng& rng, const AttentionConfig& config)
    : channels_(channels),
      reduced_(std::max<std::size_t>(1, channels / std::max<std::size_t>(1, config.reduction))),
      config_(config) {
  if (channels == 0) throw ConfigError("attention block needs at least one channel");
  w_f_ = kaiming_normal<T>(Shape{reduced_, channels_, 1, 1}, channels_, rng);
  w_g_ = kaiming_normal<T>(Shape{reduced_, channels_, 1, 1}, channels_, rng);
  w_h_ = kaiming_normal<T>(Shape{channels_, channels_, 1, 1}, channels_, rng);
  gamma_ = trainable_zeros<T>(Shape{1});
  if (config_.spectral_norm) {
    u_f_ = unit_vector<T>(reduced_, rng);
    u_g_ = unit_vector<T>(reduced_, rng);
    u_h_ = unit_vector<T>(channels_, rng);
  }
}

template <typename T>
ParameterList<T> AttentionBlock<T>::parameters() const {
  return {{"w_f", w_f_}, {"w_g", w_g_}, {"w_h", w_h_}, {"gamma", gamma_}};
}

template <typename T>
ParameterList<T> AttentionBlock<T>::buffers() const {
  if (!config_.spectral_norm) return {};
  return {{"u_f", u_f_}, {"u_g", u_g_}, {"u_h", u_h_}};
}

template <typename T>
Tensor<T> AttentionBlock<T>::effective(const Tensor<T>& weight, const Tensor<T>& u) const {
  if (!config_.spectral_norm) return weight;
  const std::size_t rows = weight.dim(0), cols = weight.dim(1);
  const auto w = weight.values();
  // One power iteration on the [rows x cols] weight matrix.
  std::vector<double> v(cols, 0.0), u_next(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) v[c] += w[r * cols + c] * static_cast<double>(u.values()[r]);
  normalize_in_place(v);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) u_next[r] += w[r * cols + c] * v[c];
  normalize_in_place(u_next);
  if (Tape::active() != nullptr) {
    Tensor<T> state = u;
    auto dst = state.mutable_values();
    for (std::size_t r = 0; r < rows; ++r) dst[r] = static_cast<T>(u_next[r]);
  }
  std::vector<T> u_row(u_next.begin(), u_next.end());
  std::vector<T> v_col(v.begin(), v.end());
  const Tensor<T> matrix = reshape(weight, Shape{rows, cols});
  const Tensor<T> sigma = matmul(matmul(Tensor<T>(Shape{1, rows}, u_row), matrix), Tensor<T>(Shape{cols, 1}, v_col));
  return div(weight, reshape(sigma, Shape{1}));
}

template <typename T>
Tensor<T> attention_scores(const Tensor<T>& x, const AttentionBlock<T>& block) {
  require_block_input(x, block, "attention_scores");
  const Tensor<T> f = flatten_spatial(conv2d(x, block.projection_f(), 1, 0));
  const Tensor<T> g = flatten_spatial(conv2d(x, block.projection_g(), 1, 0));
  // scores[j][i] = sum_c g[c][j] * f[c][i]
  return bmm(g, f, true, false);
}

template <typename T>
Tensor<T> attention_map(const Tensor<T>& scores) {
  if (!scores.defined() || scores.rank() != 3 || scores.dim(1) != scores.dim(2)) {
    throw DimensionError("attention_map: expected b x N x N scores");
  }
  return softmax(scores, 2);
}

template <typename T>
Tensor<T> attention_output(const Tensor<T>& x, const Tensor<T>& beta, const AttentionBlock<T>& block) {
  require_block_input(x, block, "attention_output");
  const std::size_t n = x.dim(2) * x.dim(3);
  if (!beta.defined() || beta.shape() != Shape{x.dim(0), n, n}) {
    throw DimensionError("attention_output: attention map " +
                         (beta.defined() ? shape_str(beta.shape()) : std::string("<undefined>")) +
                         " does not match input " + shape_str(x.shape()));
  }
  const Tensor<T> h = flatten_spatial(conv2d(x, block.projection_h(), 1, 0));
  // o[c][j] = sum_i h[c][i] * beta[j][i]
  return reshape(bmm(h, beta, false, true), x.shape());
}

template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionBlock<T>& block) {
  const Tensor<T> beta = attention_map(attention_scores(x, block));
  return add(mul(block.gamma(), attention_output(x, beta, block)), x);
}

template class AttentionBlock<float>;
template class AttentionBlock<double>;
template Tensor<float> attention_scores(const Tensor<float>&, const AttentionBlock<float>&);
template Tensor<double> attention_scores(const Tensor<double>&, const AttentionBlock<double>&);
template Tensor<float> attention_map(const Tensor<float>&);
template Tensor<double> attention_map(const Tensor<double>&);
template Tensor<float> attention_output(const Tensor<float>&, const Tensor<float>&, const AttentionBlock<float>&);
template Tensor<double> attention_output(const Tensor<double>&, const Tensor<double>&,
                                         const AttentionBlock<double>&);
template Tensor<float> attention_forward(const Tensor<float>&, const AttentionBlock<float>&);
template Tensor<double> attention_forward(const Tensor<double>&, const AttentionBlock<double>&);

}  // namespace i2i
