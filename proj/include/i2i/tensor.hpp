#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace i2i {

// Dense row-major shape; images are batch x channels x height x width.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty means "no gradient yet"
  bool requires_grad = false;
  // Tape and generation that produced this node, used to reject stale backward calls.
  const Tape* tape = nullptr;
  std::uint64_t generation = 0;
};

}  // namespace detail

// Reference-counted handle to a tensor node. Copies share storage; use
// detach() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  // Direct write access; only optimizers and initializers should use this.
  std::span<T> mutable_values() { return node_->value; }
  T item() const;
  T at(std::size_t flat_index) const { return node_->value.at(flat_index); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  /// Gradient storage, allocated as zeros on first use.
  std::span<T> grad_buffer() const;
  void clear_grad() { node_->grad.clear(); }

  /// Value copy with no gradient history.
  Tensor detach() const;
  bool is_same(const Tensor& other) const { return node_ == other.node_; }

  detail::TensorNode<T>& node() const { return *node_; }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

// Ordered record of executed differentiable operations. Constructing a Tape
// makes it the active tape of the calling thread until it is destroyed;
// operations executed while no tape is active are not recorded.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and runs recorded backward functions in
  /// reverse execution order. The recorded forward is consumed.
  template <typename T>
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  std::uint64_t generation() const { return generation_; }
  bool consumed() const { return consumed_; }

 private:
  friend class NoGradGuard;
  std::vector<std::function<void()>> entries_;
  std::uint64_t generation_ = 1;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

/// Suspends recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

/// backward() on the thread's active tape.
template <typename T>
void backward(const Tensor<T>& loss);

/// Throws NumericError naming `op` if any value is NaN or Inf.
template <typename T>
void require_finite(std::span<const T> values, const char* op);

}  // namespace i2i
