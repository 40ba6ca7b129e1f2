#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a shape plus a shared storage block. Views produced by
// reshape() share storage (data and gradient) with their source. Operations
// in ops.hpp record a backward rule on the thread's active Tape whenever one
// is installed (see TapeScope) and at least one input requires a gradient.
// Without an active tape nothing is recorded, which is the inference path.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tfgrasp/errors.hpp"

namespace tfgrasp {

using Index = std::int64_t;
using Shape = std::vector<Index>;

Index shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  // Negative axes count from the end.
  Index dim(Index axis) const;
  Index numel() const;

  std::span<const Scalar> data() const;
  // Raw write access, for initializers and the optimizer. Writing into a
  // tensor that a live tape still references invalidates its gradients.
  std::span<Scalar> mutable_data();
  Scalar item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Empty span when no gradient has been allocated.
  std::span<const Scalar> grad() const;
  // Allocates a zero gradient on first use. The gradient buffer is not part
  // of the tensor's value, so it is writable through const handles.
  std::span<Scalar> grad_mut() const;
  void zero_grad() const;
  void drop_grad() const;

  // Shares storage; the element count must be preserved.
  Tensor reshape(Shape shape) const;
  // Deep copy of the values, without gradient tracking.
  Tensor detach() const;

  template <typename Other>
  Tensor<Other> cast() const;

  const void* storage_id() const { return storage_.get(); }

 private:
  struct Storage {
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };

  Shape shape_;
  std::shared_ptr<Storage> storage_;
};

template <typename Scalar>
template <typename Other>
Tensor<Other> Tensor<Scalar>::cast() const {
  auto values = data();
  return Tensor<Other>(shape_, std::vector<Other>(values.begin(), values.end()),
                       requires_grad());
}

// Ordered record of differentiable operations. backward() replays the
// recorded rules in reverse order. Gradients of recorded outputs are reset at
// the start of every backward() call; gradients of leaves accumulate until
// the caller zeroes them.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const Scalar> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor<Scalar>& output, BackwardFn fn);
  void backward(const Tensor<Scalar>& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }

  static Tape* active() { return active_; }

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;

  struct Entry {
    Tensor<Scalar> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;

  static thread_local Tape* active_;
};

template <typename Scalar>
thread_local Tape<Scalar>* Tape<Scalar>::active_ = nullptr;

// Installs a tape as the active recorder for the current thread.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(Tape<Scalar>::active_) {
    Tape<Scalar>::active_ = &tape;
  }
  ~TapeScope() { Tape<Scalar>::active_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

// Suspends recording for the current thread.
template <typename Scalar>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<Scalar>::active_) { Tape<Scalar>::active_ = nullptr; }
  ~NoGradScope() { Tape<Scalar>::active_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace tfgrasp
