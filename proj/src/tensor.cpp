#include "tfgrasp/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace tfgrasp {

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad)
    : shape_(std::move(shape)), storage_(std::make_shared<Storage>()) {
  check_shape(shape_);
  if (static_cast<Index>(values.size()) != shape_numel(shape_)) {
    throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " +
                     std::to_string(shape_numel(shape_)) + " values, got " +
                     std::to_string(values.size()));
  }
  storage_->data = std::move(values);
  storage_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  check_shape(shape);
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  return Tensor(std::move(shape), std::vector<Scalar>(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return Tensor(Shape{1}, {value}, requires_grad);
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Index Tensor<Scalar>::numel() const {
  return storage_ ? static_cast<Index>(storage_->data.size()) : 0;
}

template <typename Scalar>
std::span<const Scalar> Tensor<Scalar>::data() const {
  if (!storage_) return {};
  return storage_->data;
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::mutable_data() {
  if (!storage_) return {};
  return storage_->data;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw ShapeError("item() needs a single element, shape " + shape_string(shape_));
  return storage_->data[0];
}

template <typename Scalar>
bool Tensor<Scalar>::requires_grad() const {
  return storage_ && storage_->requires_grad;
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!storage_) throw ContractError("set_requires_grad on an undefined tensor");
  storage_->requires_grad = flag;
}

template <typename Scalar>
bool Tensor<Scalar>::has_grad() const {
  return storage_ && !storage_->grad.empty();
}

template <typename Scalar>
std::span<const Scalar> Tensor<Scalar>::grad() const {
  if (!storage_) return {};
  return storage_->grad;
}

template <typename Scalar>
std::span<Scalar> Tensor<Scalar>::grad_mut() const {
  if (!storage_) throw ContractError("grad on an undefined tensor");
  if (storage_->grad.size() != storage_->data.size()) {
    storage_->grad.assign(storage_->data.size(), Scalar(0));
  }
  return storage_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() const {
  if (!storage_) return;
  storage_->grad.assign(storage_->data.size(), Scalar(0));
}

template <typename Scalar>
void Tensor<Scalar>::drop_grad() const {
  if (!storage_) return;
  storage_->grad.clear();
  storage_->grad.shrink_to_fit();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshape(Shape shape) const {
  check_shape(shape);
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  Tensor view;
  view.shape_ = std::move(shape);
  view.storage_ = storage_;
  return view;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  auto values = data();
  return Tensor(shape_, std::vector<Scalar>(values.begin(), values.end()));
}

template <typename Scalar>
void Tape<Scalar>::record(const Tensor<Scalar>& output, BackwardFn fn) {
  entries_.push_back(Entry{output, std::move(fn)});
}

template <typename Scalar>
void Tape<Scalar>::backward(const Tensor<Scalar>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.shape()));
  }
  for (auto& entry : entries_) entry.output.zero_grad();
  Tensor<Scalar> seed = loss;
  seed.grad_mut()[0] += Scalar(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward(it->output.grad());
  }
}

template <typename Scalar>
void Tape<Scalar>::clear() {
  entries_.clear();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace tfgrasp
