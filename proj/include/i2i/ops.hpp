#pragma once

#include <cstddef>
#include <cstdint>

#include "i2i/tensor.hpp"

// Differentiable operations. Each op records a backward function on the
// active tape when any input requires grad; otherwise it only computes the
// forward value. All ops are instantiated for float and double.
namespace i2i {

inline constexpr double kInstanceNormEps = 1e-5;

// While alive, accumulates a fingerprint of the branch every piecewise op
// (relu, leaky_relu, abs, clamp, l1_norm) takes per element on this thread.
// Finite-difference checks compare fingerprints to detect evaluations that
// straddle a kink.
class BranchMonitor {
 public:
  BranchMonitor();
  ~BranchMonitor();
  BranchMonitor(const BranchMonitor&) = delete;
  BranchMonitor& operator=(const BranchMonitor&) = delete;

  std::uint64_t fingerprint() const { return fingerprint_; }
  void mix(std::uint64_t branch);

 private:
  BranchMonitor* previous_;
  std::uint64_t fingerprint_ = 0xcbf29ce484222325ULL;
};

// ---- linear algebra -------------------------------------------------------

/// [m x k] * [k x n] -> [m x n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Batched product over the leading axis of two rank-3 tensors, with
/// optional transposition of the trailing two axes of either operand.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
              bool transpose_b = false);

/// x [b x in] * w[out x in]^T + bias[out]. bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation with zero padding. weight is [out x in x k x k].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride,
                 std::size_t pad);

/// conv2d followed by a per-output-channel bias. bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

// ---- elementwise ----------------------------------------------------------
// Binary ops require equal shapes, or one operand holding a single element
// which is then broadcast.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double offset);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope = 0.2);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
/// Natural log; throws DomainError on any non-positive input.
template <typename T>
Tensor<T> log(const Tensor<T>& x);
template <typename T>
Tensor<T> abs(const Tensor<T>& x);
/// Gradient passes only where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi);

// ---- reductions (results have shape [1]) ----------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);
/// mean(|a - b|)
template <typename T>
Tensor<T> l1_norm(const Tensor<T>& a, const Tensor<T>& b);

// ---- normalization and resampling ----------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);

/// Per (sample, channel) normalization over h x w, then optional affine
/// (weight, bias of length C; pass undefined tensors for identity).
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                        double eps = kInstanceNormEps);

/// Instance normalization with per-sample scale/shift of shape [b x C].
template <typename T>
Tensor<T> adaptive_instance_norm(const Tensor<T>& x, const Tensor<T>& scale,
                                 const Tensor<T>& shift, double eps = kInstanceNormEps);

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x);

/// [b x C x h x w] -> [b x C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// ---- shape ----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Columns [begin, begin + count) of a rank-2 tensor.
template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, std::size_t begin, std::size_t count);

}  // namespace i2i
