#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "i2i/layers.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

// Gaussian summary of a feature set.
struct FidStats {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  std::size_t n = 0;

  std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
};

/// Mean and unbiased (n - 1) covariance of the rows of `features`
/// (one sample per row). ContractError for fewer than two rows.
FidStats compute_stats(const Eigen::MatrixXd& features);

/// Square root of a symmetric positive semidefinite matrix through its
/// eigendecomposition. Eigenvalues down to -1e-6 (relative to the largest
/// magnitude) are clamped to zero; an asymmetry above 1e-8 or a more
/// negative eigenvalue raises DomainError.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m);

/// Frechet distance before clamping. The cross term uses
/// tr sqrt(sqrt(Sa) Sb sqrt(Sa)), which equals tr sqrt(Sa Sb) but keeps
/// every intermediate symmetric.
double fid_unclamped(const FidStats& a, const FidStats& b);

/// fid_unclamped clamped at zero. A negative raw value is reported to
/// `log` when one is given.
double fid(const FidStats& a, const FidStats& b, std::ostream* log = nullptr);

// Fixed random convolutional feature map used in place of a pretrained
// classifier: three stride-2 4x4 convolutions with leaky ReLU (3 -> 16 ->
// 32 -> 64 channels), then global average pooling. The weights come from
// kSeed and are never trained.
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kSeed = 20190101;
  static constexpr std::size_t kFeatures = 64;

  FeatureExtractor();

  /// [b x 3 x s x s] (s >= 8) to [b x 64], in double precision.
  Eigen::MatrixXd features(const Tensor<double>& images) const;

  /// Features of single-image tensors, evaluated one image at a time in order.
  template <typename T>
  Eigen::MatrixXd features(const std::vector<Tensor<T>>& images) const;

  template <typename T>
  FidStats stats(const std::vector<Tensor<T>>& images) const {
    return compute_stats(features(images));
  }

 private:
  Conv2dLayer<double> stages_[3];
};

}  // namespace i2i
