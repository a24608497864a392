#include "i2i/fid.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "i2i/errors.hpp"
#include "i2i/ops.hpp"
#include "i2i/rng.hpp"

namespace i2i {

FidStats compute_stats(const Eigen::MatrixXd& features) {
  const auto n = features.rows();
  if (n < 2) throw ContractError("FID statistics need at least two samples, got " + std::to_string(n));
  FidStats s;
  s.n = static_cast<std::size_t>(n);
  // Two passes with a fixed summation order: mean first, then centred products.
  s.mu = features.colwise().sum().transpose() / static_cast<double>(n);
  const Eigen::MatrixXd centred = features.rowwise() - s.mu.transpose();
  s.sigma = (centred.transpose() * centred) / static_cast<double>(n - 1);
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose()).eval();
  return s;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw DimensionError("matrix_sqrt_psd: matrix is not square");
  if (m.size() == 0) return m;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  const double asymmetry = (m - m.transpose()).cwiseAbs().maxCoeff();
  if (asymmetry > 1e-8 * scale) {
    throw DomainError("matrix_sqrt_psd: matrix is not symmetric (max |m - m^T| = " + std::to_string(asymmetry) + ")");
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericError("matrix_sqrt_psd: eigendecomposition failed");
  Eigen::VectorXd values = eig.eigenvalues();
  const double largest = std::max(values.cwiseAbs().maxCoeff(), 1.0);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] < -1e-6 * largest) {
      throw DomainError("matrix_sqrt_psd: eigenvalue " + std::to_string(values[i]) + " is negative");
    }
    values[i] = std::sqrt(std::max(values[i], 0.0));
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  return v * values.asDiagonal() * v.transpose();
}

double fid_unclamped(const FidStats& a, const FidStats& b) {
  if (a.dim() != b.dim()) {
    throw ContractError("fid: feature dimensions differ (" + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()) + ")");
  }
  const double mean_term = (a.mu - b.mu).squaredNorm();
  const Eigen::MatrixXd root_a = matrix_sqrt_psd(a.sigma);
  Eigen::MatrixXd inner = root_a * b.sigma * root_a;
  inner = 0.5 * (inner + inner.transpose()).eval();
  const double cross = matrix_sqrt_psd(inner).trace();
  return mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
}

double fid(const FidStats& a, const FidStats& b, std::ostream* log) {
  const double raw = fid_unclamped(a, b);
  if (raw < 0) {
    if (log) *log << "note: FID " << raw << " is below zero from rounding; reporting 0\n";
    return 0.0;
  }
  return raw;
}

FeatureExtractor::FeatureExtractor() {
  Rng rng(kSeed);
  const std::size_t widths[4] = {3, 16, 32, 64};
  for (std::size_t k = 0; k < 3; ++k) stages_[k] = Conv2dLayer<double>(widths[k], widths[k + 1], 4, 2, 1, rng);
}

Eigen::MatrixXd FeatureExtractor::features(const Tensor<double>& images) const {
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) < 8 || images.dim(3) < 8) {
    throw DimensionError("feature extractor expects [b x 3 x h x w] with h, w >= 8, got " +
                         shape_str(images.shape()));
  }
  NoGradGuard no_grad;
  Tensor<double> h = images;
  for (const auto& stage : stages_) h = leaky_relu(stage(h), 0.2);
  const Tensor<double> pooled = global_avg_pool(h);
  const auto b = static_cast<Eigen::Index>(pooled.dim(0));
  Eigen::MatrixXd out(b, static_cast<Eigen::Index>(kFeatures));
  const auto v = pooled.values();
  for (Eigen::Index i = 0; i < b; ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = v[static_cast<std::size_t>(i * out.cols() + j)];
  }
  return out;
}

template <typename T>
Eigen::MatrixXd FeatureExtractor::features(const std::vector<Tensor<T>>& images) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(kFeatures));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto v = images[i].values();
    if (images[i].rank() != 4 || images[i].dim(0) != 1) {
      throw DimensionError("feature extractor expects single images, got " + shape_str(images[i].shape()));
    }
    const Tensor<double> x(images[i].shape(), std::vector<double>(v.begin(), v.end()));
    out.row(static_cast<Eigen::Index>(i)) = features(x).row(0);
  }
  return out;
}

template Eigen::MatrixXd FeatureExtractor::features(const std::vector<Tensor<float>>&) const;
template Eigen::MatrixXd FeatureExtractor::features(const std::vector<Tensor<double>>&) const;

}  // namespace i2i
