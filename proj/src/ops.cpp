#include "i2i/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "i2i/errors.hpp"

namespace i2i {

namespace {

thread_local BranchMonitor* g_branch_monitor = nullptr;

// Folds the branch taken by each element of a piecewise op into the active monitor.
template <typename T, typename Branch>
void note_branches(std::span<const T> values, Branch branch) {
  if (g_branch_monitor == nullptr) return;
  for (const T v : values) g_branch_monitor->mix(static_cast<std::uint64_t>(branch(v)));
}

}  // namespace

BranchMonitor::BranchMonitor() : previous_(g_branch_monitor) { g_branch_monitor = this; }

BranchMonitor::~BranchMonitor() { g_branch_monitor = previous_; }

void BranchMonitor::mix(std::uint64_t branch) {
  fingerprint_ = (fingerprint_ ^ (branch + 1)) * 0x100000001b3ULL;
}

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixView = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixView = Eigen::Map<const RowMatrix<T>>;

// C[m x n] (+)= op(A)[m x k] * op(B)[k x n]. A is stored k x m when
// transpose_a is set, B is stored n x k when transpose_b is set.
template <typename T>
void gemm(T* c, const T* a, const T* b, std::size_t m, std::size_t n, std::size_t k,
          bool transpose_a, bool transpose_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MatrixView<T> C(c, M, N);
  if (!accumulate) C.setZero();
  if (!transpose_a && !transpose_b) {
    C.noalias() += ConstMatrixView<T>(a, M, K) * ConstMatrixView<T>(b, K, N);
  } else if (transpose_a && !transpose_b) {
    C.noalias() += ConstMatrixView<T>(a, K, M).transpose() * ConstMatrixView<T>(b, K, N);
  } else if (!transpose_a && transpose_b) {
    C.noalias() += ConstMatrixView<T>(a, M, K) * ConstMatrixView<T>(b, N, K).transpose();
  } else {
    C.noalias() +=
        ConstMatrixView<T>(a, K, M).transpose() * ConstMatrixView<T>(b, N, K).transpose();
  }
}

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Builds the output tensor, validates finiteness and records `backward_fn`.
template <typename T, typename Fn>
Tensor<T> emit(const char* op, Shape shape, std::vector<T> values, bool track, Fn&& make_backward) {
  require_finite<T>(values, op);
  Tensor<T> out(std::move(shape), std::move(values), track);
  if (track) {
    Tape* tape = Tape::active();
    tape->record(make_backward(out));
    out.node().tape = tape;
    out.node().generation = tape->generation();
  }
  return out;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (!t.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary(const char* op, const Tensor<T>& x, Fwd fwd, Bwd dydx) {
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(xv[i]);
  return emit<T>(op, x.shape(), std::move(y), tracking<T>({&x}), [x, dydx](Tensor<T> out) {
    return [x, out, dydx]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto g = out.grad();
      auto xv = x.values();
      auto yv = out.values();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dydx(xv[i], yv[i]);
    };
  });
}

// Elementwise binary op with single-element broadcast on either side.
// da/db return d(out)/d(a), d(out)/d(b) given (a, b).
template <typename T, typename Fwd, typename Da, typename Db>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Da da, Db db) {
  if (!a.defined() || !b.defined()) throw DimensionError(std::string(op) + ": undefined operand");
  const bool a_scalar = a.numel() == 1 && b.numel() != 1;
  const bool b_scalar = b.numel() == 1 && a.numel() != 1;
  if (!a_scalar && !b_scalar) require_same_shape(a, b, op);
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<T> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  return emit<T>(op, shape, std::move(y), tracking<T>({&a, &b}),
                 [a, b, a_scalar, b_scalar, da, db](Tensor<T> out) {
                   return [a, b, out, a_scalar, b_scalar, da, db]() mutable {
                     if (!out.has_grad()) return;
                     auto g = out.grad();
                     auto av = a.values();
                     auto bv = b.values();
                     if (a.requires_grad()) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T ai = av[a_scalar ? 0 : i];
                         const T bi = bv[b_scalar ? 0 : i];
                         ga[a_scalar ? 0 : i] += g[i] * da(ai, bi);
                       }
                     }
                     if (b.requires_grad()) {
                       auto gb = b.grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T ai = av[a_scalar ? 0 : i];
                         const T bi = bv[b_scalar ? 0 : i];
                         gb[b_scalar ? 0 : i] += g[i] * db(ai, bi);
                       }
                     }
                   };
                 });
}

// Unfolds one image [C x H x W] into columns [C*K*K x OH*OW].
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* cols) {
  const std::size_t positions = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kernel; ++ki) {
      for (std::size_t kj = 0; kj < kernel; ++kj) {
        T* row = cols + ((c * kernel + ki) * kernel + kj) * positions;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oh * out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = x + (c * height + static_cast<std::size_t>(ih)) * width;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            dst[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(width)) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t kernel, std::size_t stride, std::size_t pad, std::size_t out_h,
                std::size_t out_w, T* x) {
  const std::size_t positions = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kernel; ++ki) {
      for (std::size_t kj = 0; kj < kernel; ++kj) {
        const T* row = cols + ((c * kernel + ki) * kernel + kj) * positions;
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * stride + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = x + (c * height + static_cast<std::size_t>(ih)) * width;
          const T* src = row + oh * out_w;
          for (std::size_t ow = 0; ow < out_w; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kj) - static_cast<std::ptrdiff_t>(pad);
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(width)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

struct ConvGeometry {
  std::size_t batch, in_c, h, w, out_c, k, stride, pad, out_h, out_w;
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
  std::size_t col_rows() const { return in_c * k * k; }
  std::size_t positions() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride,
                           std::size_t pad) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  ConvGeometry g{};
  g.batch = x.dim(0);
  g.in_c = x.dim(1);
  g.h = x.dim(2);
  g.w = x.dim(3);
  g.out_c = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = stride;
  g.pad = pad;
  if (weight.dim(1) != g.in_c || weight.dim(3) != g.k) {
    throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  if (g.k > g.h + 2 * pad || g.k > g.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + std::to_string(g.k) + " larger than padded input " +
                         shape_str(x.shape()));
  }
  g.out_h = (g.h + 2 * pad - g.k) / stride + 1;
  g.out_w = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> y(m * n);
  gemm(y.data(), a.values().data(), b.values().data(), m, n, k, false, false, false);
  return emit<T>("matmul", Shape{m, n}, std::move(y), tracking<T>({&a, &b}), [=](Tensor<T> out) {
    return [a, b, out, m, n, k]() mutable {
      if (!out.has_grad()) return;
      const T* g = out.grad().data();
      if (a.requires_grad()) gemm(a.grad_buffer().data(), g, b.values().data(), m, k, n, false, true, true);
      if (b.requires_grad()) gemm(b.grad_buffer().data(), a.values().data(), g, k, n, m, true, false, true);
    };
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  if (a.dim(0) != b.dim(0)) throw DimensionError("bmm: batch sizes differ");
  const std::size_t batch = a.dim(0);
  const std::size_t m = transpose_a ? a.dim(2) : a.dim(1);
  const std::size_t k = transpose_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = transpose_b ? b.dim(2) : b.dim(1);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (k != kb) {
    throw DimensionError("bmm: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<T> y(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(y.data() + i * m * n, a.values().data() + i * m * k, b.values().data() + i * k * n, m, n, k,
         transpose_a, transpose_b, false);
  }
  return emit<T>("bmm", Shape{batch, m, n}, std::move(y), tracking<T>({&a, &b}), [=](Tensor<T> out) {
    return [a, b, out, batch, m, n, k, transpose_a, transpose_b]() mutable {
      if (!out.has_grad()) return;
      for (std::size_t i = 0; i < batch; ++i) {
        const T* g = out.grad().data() + i * m * n;
        const T* av = a.values().data() + i * m * k;
        const T* bv = b.values().data() + i * k * n;
        if (a.requires_grad()) {
          T* ga = a.grad_buffer().data() + i * m * k;
          // d op(A) = G op(B)^T
          if (!transpose_a) {
            gemm(ga, g, bv, m, k, n, false, !transpose_b, true);
          } else {
            gemm(ga, bv, g, k, m, n, transpose_b, true, true);
          }
        }
        if (b.requires_grad()) {
          T* gb = b.grad_buffer().data() + i * k * n;
          // d op(B) = op(A)^T G
          if (!transpose_b) {
            gemm(gb, av, g, k, n, m, !transpose_a, false, true);
          } else {
            gemm(gb, g, av, n, k, m, true, transpose_a, true);
          }
        }
      }
    };
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != outf) throw DimensionError("linear: bias length mismatch");
  std::vector<T> y(batch * outf);
  gemm(y.data(), x.values().data(), weight.values().data(), batch, outf, in, false, true, false);
  if (bias.defined()) {
    for (std::size_t r = 0; r < batch; ++r)
      for (std::size_t o = 0; o < outf; ++o) y[r * outf + o] += bias.values()[o];
  }
  return emit<T>("linear", Shape{batch, outf}, std::move(y), tracking<T>({&x, &weight, &bias}),
                 [=](Tensor<T> out) {
                   return [x, weight, bias, out, batch, in, outf]() mutable {
                     if (!out.has_grad()) return;
                     const T* g = out.grad().data();
                     if (x.requires_grad())
                       gemm(x.grad_buffer().data(), g, weight.values().data(), batch, in, outf, false, false, true);
                     if (weight.requires_grad())
                       gemm(weight.grad_buffer().data(), g, x.values().data(), outf, in, batch, true, false, true);
                     if (bias.defined() && bias.requires_grad()) {
                       auto gb = bias.grad_buffer();
                       for (std::size_t r = 0; r < batch; ++r)
                         for (std::size_t o = 0; o < outf; ++o) gb[o] += g[r * outf + o];
                     }
                   };
                 });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::size_t stride, std::size_t pad) {
  return conv2d(x, weight, Tensor<T>(), stride, pad);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  const ConvGeometry geo = conv_geometry(x, weight, stride, pad);
  if (bias.defined() && bias.numel() != geo.out_c) throw DimensionError("conv2d: bias length mismatch");
  const std::size_t in_plane = geo.in_c * geo.h * geo.w;
  const std::size_t out_plane = geo.out_c * geo.positions();
  std::vector<T> y(geo.batch * out_plane);
  std::vector<T> cols(geo.pointwise() ? 0 : geo.col_rows() * geo.positions());
  for (std::size_t b = 0; b < geo.batch; ++b) {
    const T* xb = x.values().data() + b * in_plane;
    const T* colp = xb;
    if (!geo.pointwise()) {
      im2col(xb, geo.in_c, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.out_h, geo.out_w, cols.data());
      colp = cols.data();
    }
    T* yb = y.data() + b * out_plane;
    gemm(yb, weight.values().data(), colp, geo.out_c, geo.positions(), geo.col_rows(), false, false, false);
    if (bias.defined()) {
      for (std::size_t o = 0; o < geo.out_c; ++o) {
        const T bo = bias.values()[o];
        T* row = yb + o * geo.positions();
        for (std::size_t p = 0; p < geo.positions(); ++p) row[p] += bo;
      }
    }
  }
  return emit<T>("conv2d", Shape{geo.batch, geo.out_c, geo.out_h, geo.out_w}, std::move(y),
                 tracking<T>({&x, &weight, &bias}), [=](Tensor<T> out) {
                   return [x, weight, bias, out, geo, in_plane, out_plane]() mutable {
                     if (!out.has_grad()) return;
                     std::vector<T> cols(geo.pointwise() ? 0 : geo.col_rows() * geo.positions());
                     for (std::size_t b = 0; b < geo.batch; ++b) {
                       const T* gb = out.grad().data() + b * out_plane;
                       const T* xb = x.values().data() + b * in_plane;
                       if (weight.requires_grad()) {
                         const T* colp = xb;
                         if (!geo.pointwise()) {
                           im2col(xb, geo.in_c, geo.h, geo.w, geo.k, geo.stride, geo.pad, geo.out_h,
                                  geo.out_w, cols.data());
                           colp = cols.data();
                         }
                         gemm(weight.grad_buffer().data(), gb, colp, geo.out_c, geo.col_rows(),
                              geo.positions(), false, true, true);
                       }
                       if (x.requires_grad()) {
                         T* gx = x.grad_buffer().data() + b * in_plane;
                         if (geo.pointwise()) {
                           gemm(gx, weight.values().data(), gb, geo.col_rows(), geo.positions(), geo.out_c,
                                true, false, true);
                         } else {
                           gemm(cols.data(), weight.values().data(), gb, geo.col_rows(), geo.positions(),
                                geo.out_c, true, false, false);
                           col2im_add(cols.data(), geo.in_c, geo.h, geo.w, geo.k, geo.stride, geo.pad,
                                      geo.out_h, geo.out_w, gx);
                         }
                       }
                       if (bias.defined() && bias.requires_grad()) {
                         auto gbias = bias.grad_buffer();
                         for (std::size_t o = 0; o < geo.out_c; ++o) {
                           T acc = 0;
                           for (std::size_t p = 0; p < geo.positions(); ++p) acc += gb[o * geo.positions() + p];
                           gbias[o] += acc;
                         }
                       }
                     }
                   };
                 });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (const T v : b.values()) {
    if (v == T(0)) throw DomainError("div: division by zero");
  }
  return binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return unary<T>("scale", x, [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, double offset) {
  const T o = static_cast<T>(offset);
  return unary<T>("add_scalar", x, [o](T v) { return v + o; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  note_branches<T>(x.values(), [](T v) { return v > T(0); });
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  const T s = static_cast<T>(slope);
  note_branches<T>(x.values(), [](T v) { return v > T(0); });
  return unary<T>(
      "leaky_relu", x, [s](T v) { return v > T(0) ? v : v * s; }, [s](T v, T) { return v > T(0) ? T(1) : s; });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      "tanh", x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      "sigmoid", x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  for (const T v : x.values()) {
    if (!(v > T(0))) throw DomainError("log: non-positive input " + std::to_string(v));
  }
  return unary<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  note_branches<T>(x.values(), [](T v) { return (v > T(0)) + 2 * (v < T(0)); });
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, double lo, double hi) {
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  note_branches<T>(x.values(), [l, h](T v) { return (v >= l) + 2 * (v <= h); });
  return unary<T>(
      "clamp", x, [l, h](T v) { return std::clamp(v, l, h); },
      [l, h](T v, T) { return (v >= l && v <= h) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (const T v : x.values()) acc += v;
  return emit<T>("sum", Shape{1}, std::vector<T>{static_cast<T>(acc)}, tracking<T>({&x}), [x](Tensor<T> out) {
    return [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      const T g = out.grad()[0];
      for (auto& gx : x.grad_buffer()) gx += g;
    };
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  double acc = 0;
  for (const T v : x.values()) acc += v;
  const double n = static_cast<double>(x.numel());
  return emit<T>("mean", Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, tracking<T>({&x}),
                 [x, n](Tensor<T> out) {
                   return [x, out, n]() mutable {
                     if (!out.has_grad() || !x.requires_grad()) return;
                     const T g = static_cast<T>(out.grad()[0] / n);
                     for (auto& gx : x.grad_buffer()) gx += g;
                   };
                 });
}

template <typename T>
Tensor<T> l1_norm(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "l1_norm");
  double acc = 0;
  const auto av = a.values();
  const auto bv = b.values();
  if (g_branch_monitor != nullptr) {
    for (std::size_t i = 0; i < av.size(); ++i) g_branch_monitor->mix((av[i] > bv[i]) + 2 * (av[i] < bv[i]));
  }
  for (std::size_t i = 0; i < av.size(); ++i) acc += std::abs(static_cast<double>(av[i]) - bv[i]);
  const double n = static_cast<double>(a.numel());
  return emit<T>("l1_norm", Shape{1}, std::vector<T>{static_cast<T>(acc / n)}, tracking<T>({&a, &b}),
                 [a, b, n](Tensor<T> out) {
                   return [a, b, out, n]() mutable {
                     if (!out.has_grad()) return;
                     const T g = static_cast<T>(out.grad()[0] / n);
                     const auto av = a.values();
                     const auto bv = b.values();
                     auto sign = [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); };
                     if (a.requires_grad()) {
                       auto ga = a.grad_buffer();
                       for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * sign(av[i] - bv[i]);
                     }
                     if (b.requires_grad()) {
                       auto gb = b.grad_buffer();
                       for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g * sign(av[i] - bv[i]);
                     }
                   };
                 });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (!x.defined() || axis >= x.rank()) throw DimensionError("softmax: axis out of range");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      double total = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(xv[base + i * inner] - mx);
        y[base + i * inner] = e;
        total += e;
      }
      const T inv = static_cast<T>(1.0 / total);
      for (std::size_t i = 0; i < len; ++i) y[base + i * inner] *= inv;
    }
  }
  return emit<T>("softmax", x.shape(), std::move(y), tracking<T>({&x}), [=](Tensor<T> out) {
    return [x, out, outer, inner, len]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto g = out.grad();
      auto yv = out.values();
      auto gx = x.grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0;
          for (std::size_t i = 0; i < len; ++i) dot += static_cast<double>(g[base + i * inner]) * yv[base + i * inner];
          const T d = static_cast<T>(dot);
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t idx = base + i * inner;
            gx[idx] += yv[idx] * (g[idx] - d);
          }
        }
      }
    };
  });
}

namespace {

// Shared kernel of instance_norm and adaptive_instance_norm. `scale` and
// `shift` are indexed by (b * C + c) when per_sample, by c otherwise; an
// undefined tensor means identity.
template <typename T>
Tensor<T> normalize_planes(const char* op, const Tensor<T>& x, const Tensor<T>& scale_t,
                           const Tensor<T>& shift_t, bool per_sample, double eps) {
  require_rank(x, 4, op);
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane < 2) throw DimensionError(std::string(op) + ": needs at least 2 spatial positions");
  const std::size_t expected = per_sample ? batch * channels : channels;
  if ((scale_t.defined() && scale_t.numel() != expected) || (shift_t.defined() && shift_t.numel() != expected)) {
    throw DimensionError(std::string(op) + ": scale/shift size does not match " + std::to_string(expected) +
                         " channels of input " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(batch * channels);
  std::vector<T> y(xv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t pc = b * channels + c;
      const T* src = xv.data() + pc * plane;
      double m = 0;
      for (std::size_t i = 0; i < plane; ++i) m += src[i];
      m /= static_cast<double>(plane);
      double var = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const double d = src[i] - m;
        var += d * d;
      }
      var /= static_cast<double>(plane);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[pc] = static_cast<T>(is);
      const std::size_t pi = per_sample ? pc : c;
      const T s = scale_t.defined() ? scale_t.values()[pi] : T(1);
      const T t = shift_t.defined() ? shift_t.values()[pi] : T(0);
      for (std::size_t i = 0; i < plane; ++i) {
        const T h = static_cast<T>((src[i] - m) * is);
        xhat[pc * plane + i] = h;
        y[pc * plane + i] = s * h + t;
      }
    }
  }
  return emit<T>(op, x.shape(), std::move(y), tracking<T>({&x, &scale_t, &shift_t}), [=](Tensor<T> out) mutable {
    return [x, scale_t, shift_t, out, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels,
            plane, per_sample]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      const bool want_x = x.requires_grad();
      const bool want_scale = scale_t.defined() && scale_t.requires_grad();
      const bool want_shift = shift_t.defined() && shift_t.requires_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t pc = b * channels + c;
          const std::size_t pi = per_sample ? pc : c;
          const T s = scale_t.defined() ? scale_t.values()[pi] : T(1);
          const T* gp = g.data() + pc * plane;
          const T* hp = xhat.data() + pc * plane;
          double sum_g = 0, sum_gh = 0;
          for (std::size_t i = 0; i < plane; ++i) {
            sum_g += gp[i];
            sum_gh += static_cast<double>(gp[i]) * hp[i];
          }
          if (want_scale) scale_t.grad_buffer()[pi] += static_cast<T>(sum_gh);
          if (want_shift) shift_t.grad_buffer()[pi] += static_cast<T>(sum_g);
          if (want_x) {
            T* gx = x.grad_buffer().data() + pc * plane;
            const double n = static_cast<double>(plane);
            const double m1 = s * sum_g / n;
            const double m2 = s * sum_gh / n;
            const double is = inv_std[pc];
            for (std::size_t i = 0; i < plane; ++i) {
              gx[i] += static_cast<T>(is * (s * gp[i] - m1 - hp[i] * m2));
            }
          }
        }
      }
    };
  });
}

}  // namespace

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, double eps) {
  return normalize_planes("instance_norm", x, weight, bias, false, eps);
}

template <typename T>
Tensor<T> adaptive_instance_norm(const Tensor<T>& x, const Tensor<T>& scale_t, const Tensor<T>& shift_t,
                                 double eps) {
  require_rank(x, 4, "adaptive_instance_norm");
  const Shape expected{x.dim(0), x.dim(1)};
  if (!scale_t.defined() || !shift_t.defined() || scale_t.shape() != expected || shift_t.shape() != expected) {
    throw DimensionError("adaptive_instance_norm: style parameters must have shape " + shape_str(expected));
  }
  return normalize_planes("adaptive_instance_norm", x, scale_t, shift_t, true, eps);
}

template <typename T>
Tensor<T> upsample_nearest2x(const Tensor<T>& x) {
  require_rank(x, 4, "upsample_nearest2x");
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xv = x.values();
  std::vector<T> y(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t i = 0; i < 2 * h; ++i) {
      for (std::size_t j = 0; j < 2 * w; ++j) {
        y[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
      }
    }
  }
  return emit<T>("upsample_nearest2x", Shape{x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(y),
                 tracking<T>({&x}), [=](Tensor<T> out) {
                   return [x, out, planes, h, w]() mutable {
                     if (!out.has_grad() || !x.requires_grad()) return;
                     auto g = out.grad();
                     auto gx = x.grad_buffer();
                     for (std::size_t p = 0; p < planes; ++p)
                       for (std::size_t i = 0; i < 2 * h; ++i)
                         for (std::size_t j = 0; j < 2 * w; ++j)
                           gx[(p * h + i / 2) * w + j / 2] += g[(p * 2 * h + i) * 2 * w + j];
                   };
                 });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t planes = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  std::vector<T> y(planes);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0;
    for (std::size_t i = 0; i < plane; ++i) acc += xv[p * plane + i];
    y[p] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return emit<T>("global_avg_pool", Shape{x.dim(0), x.dim(1)}, std::move(y), tracking<T>({&x}),
                 [=](Tensor<T> out) {
                   return [x, out, planes, plane]() mutable {
                     if (!out.has_grad() || !x.requires_grad()) return;
                     auto g = out.grad();
                     auto gx = x.grad_buffer();
                     const T inv = static_cast<T>(1.0 / static_cast<double>(plane));
                     for (std::size_t p = 0; p < planes; ++p)
                       for (std::size_t i = 0; i < plane; ++i) gx[p * plane + i] += g[p] * inv;
                   };
                 });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> y(x.values().begin(), x.values().end());
  return emit<T>("reshape", std::move(shape), std::move(y), tracking<T>({&x}), [x](Tensor<T> out) {
    return [x, out]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    };
  });
}

template <typename T>
Tensor<T> slice_columns(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  require_rank(x, 2, "slice_columns");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (count == 0 || begin + count > cols) throw DimensionError("slice_columns: range out of bounds");
  std::vector<T> y(rows * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < count; ++c) y[r * count + c] = x.values()[r * cols + begin + c];
  return emit<T>("slice_columns", Shape{rows, count}, std::move(y), tracking<T>({&x}), [=](Tensor<T> out) {
    return [x, out, rows, cols, begin, count]() mutable {
      if (!out.has_grad() || !x.requires_grad()) return;
      auto g = out.grad();
      auto gx = x.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < count; ++c) gx[r * cols + begin + c] += g[r * count + c];
    };
  });
}

#define I2I_INSTANTIATE_OPS(T)                                                                     \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);         \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,     \
                            std::size_t);                                                          \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, double);                                              \
  template Tensor<T> add_scalar(const Tensor<T>&, double);                                         \
  template Tensor<T> relu(const Tensor<T>&);                                                       \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                         \
  template Tensor<T> tanh(const Tensor<T>&);                                                       \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                    \
  template Tensor<T> log(const Tensor<T>&);                                                        \
  template Tensor<T> abs(const Tensor<T>&);                                                        \
  template Tensor<T> clamp(const Tensor<T>&, double, double);                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                        \
  template Tensor<T> mean(const Tensor<T>&);                                                       \
  template Tensor<T> l1_norm(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
  template Tensor<T> adaptive_instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                            double);                                               \
  template Tensor<T> upsample_nearest2x(const Tensor<T>&);                                         \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                            \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                             \
  template Tensor<T> slice_columns(const Tensor<T>&, std::size_t, std::size_t);

I2I_INSTANTIATE_OPS(float)
I2I_INSTANTIATE_OPS(double)

}  // namespace i2i
