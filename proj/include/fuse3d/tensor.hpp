#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "fuse3d/error.hpp"

namespace fuse3d {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;  // empty until touched; same length as values after
  bool requires_grad = false;
};

// Dense n-dimensional array with shared storage. Copies alias the same
// buffer; ops never mutate their inputs' values, only accumulate grads.
template <typename T>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<T>>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.d_->values.assign(numel(shape), T(0));
    t.d_->shape = std::move(shape);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (T& v : t.d_->values) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    FUSE3D_CHECK(numel(shape) == values.size(),
                 "tensor: shape ", shape_str(shape), " does not match ",
                 values.size(), " values");
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return from({1}, {value}, requires_grad);
  }

  const Shape& shape() const { return d_->shape; }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }

  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }
  std::vector<T>& values() { return d_->values; }
  const std::vector<T>& values() const { return d_->values; }

  T item() const {
    FUSE3D_CHECK(size() == 1, "item: tensor has ", size(), " elements");
    return d_->values[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    d_->requires_grad = flag;
    return *this;
  }

  // Grad buffer, allocated zero-filled on first access.
  std::vector<T>& grad() {
    if (d_->grad.size() != d_->values.size())
      d_->grad.assign(d_->values.size(), T(0));
    return d_->grad;
  }
  const std::vector<T>& grad_ref() const { return d_->grad; }
  bool has_grad() const { return !d_->grad.empty(); }
  void zero_grad() {
    if (!d_->grad.empty()) d_->grad.assign(d_->values.size(), T(0));
  }

  // Value copy detached from any grad participation.
  Tensor detach() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->values = d_->values;
    return t;
  }

  std::shared_ptr<TensorData<T>> node() const { return d_; }
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorData<T>> d_;
};

// Ordered record of backward closures. The reverse sweep visits them in
// exact reverse execution order, which pins the accumulation order and
// makes gradients bit-reproducible. One forward/backward at a time.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  void backward(Tensor<T>& loss) {
    FUSE3D_CHECK(loss.size() == 1,
                 "backward: loss must be scalar, got shape ",
                 shape_str(loss.shape()));
    loss.grad()[0] = T(1);
    for (std::size_t i = nodes_.size(); i-- > 0;) nodes_[i]();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

template <typename T>
inline thread_local Tape<T>* tls_tape = nullptr;

template <typename T>
Tape<T>* active_tape() {
  return tls_tape<T>;
}

// RAII activation of a tape for the current thread. Ops record backward
// closures only while a tape is active and some input requires grad.
template <typename T>
class TapeScope {
 public:
  TapeScope() : prev_(tls_tape<T>) { tls_tape<T> = &tape_; }
  ~TapeScope() { tls_tape<T> = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

  Tape<T>& tape() { return tape_; }
  void backward(Tensor<T>& loss) { tape_.backward(loss); }

 private:
  Tape<T> tape_;
  Tape<T>* prev_;
};

namespace detail {

template <typename T>
void check_feature(const Tensor<T>& x, const char* op) {
  FUSE3D_CHECK(x.rank() == 4, op, ": expected [C,D,H,W] tensor, got ",
               shape_str(x.shape()));
}

template <typename T>
bool tracing(Tape<T>* tp, bool any_requires_grad) {
  return tp != nullptr && any_requires_grad;
}

// Accumulation helper used by backward closures: skips tensors that do not
// participate in the gradient.
template <typename T>
std::vector<T>* grad_sink(const std::shared_ptr<TensorData<T>>& node) {
  if (!node->requires_grad) return nullptr;
  if (node->grad.size() != node->values.size())
    node->grad.assign(node->values.size(), T(0));
  return &node->grad;
}

// Upstream gradient of a node; null when the node was never part of the
// loss (its closure then has nothing to propagate).
template <typename T>
const std::vector<T>* grad_source(const std::shared_ptr<TensorData<T>>& node) {
  if (node->grad.size() != node->values.size()) return nullptr;
  return &node->grad;
}

}  // namespace detail

}  // namespace fuse3d
