#pragma once

#include <cstddef>

#include "i2i/parameters.hpp"
#include "i2i/rng.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

struct AttentionConfig {
  // Query/key channels are max(1, channels / reduction).
  std::size_t reduction = 8;
  bool spectral_norm = false;
};

// Self-attention (non-local) block over the spatial positions of a feature
// map. f and g project C channels to the reduced width, h keeps C channels;
// all three are bias-free 1x1 convolutions. The residual gate gamma starts
// at zero so a fresh block is the identity map.
template <typename T>
class AttentionBlock {
 public:
  AttentionBlock(std::size_t channels, Rng& rng, const AttentionConfig& config = {});

  std::size_t channels() const { return channels_; }
  std::size_t reduced_channels() const { return reduced_; }
  const AttentionConfig& config() const { return config_; }

  Tensor<T>& w_f() { return w_f_; }
  Tensor<T>& w_g() { return w_g_; }
  Tensor<T>& w_h() { return w_h_; }
  Tensor<T>& gamma() { return gamma_; }
  const Tensor<T>& gamma() const { return gamma_; }

  /// Projection weights as used in the forward pass (spectrally normalized
  /// when enabled). The power-iteration state advances only while a tape
  /// is recording.
  Tensor<T> projection_f() const { return effective(w_f_, u_f_); }
  Tensor<T> projection_g() const { return effective(w_g_, u_g_); }
  Tensor<T> projection_h() const { return effective(w_h_, u_h_); }

  ParameterList<T> parameters() const;
  /// Non-trainable state (power-iteration vectors); empty without spectral norm.
  ParameterList<T> buffers() const;

 private:
  Tensor<T> effective(const Tensor<T>& weight, const Tensor<T>& u) const;

  std::size_t channels_;
  std::size_t reduced_;
  AttentionConfig config_;
  Tensor<T> w_f_, w_g_, w_h_, gamma_;
  Tensor<T> u_f_, u_g_, u_h_;
};

/// Pairwise scores [b x N x N] with entry (j, i) = f(x_i)^T g(x_j), N = h * w.
template <typename T>
Tensor<T> attention_scores(const Tensor<T>& x, const AttentionBlock<T>& block);

/// Softmax of each score row over source positions i.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& scores);

/// o_j = sum_i beta(j, i) h(x_i), reshaped to x's layout.
template <typename T>
Tensor<T> attention_output(const Tensor<T>& x, const Tensor<T>& beta, const AttentionBlock<T>& block);

/// gamma * o + x.
template <typename T>
Tensor<T> attention_forward(const Tensor<T>& x, const AttentionBlock<T>& block);

}  // namespace i2i
