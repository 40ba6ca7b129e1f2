#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tfgrasp/tensor.hpp"

namespace tfgrasp {

// Ordered, named collection of trainable tensors. Random initial values are
// drawn from a generator keyed by (seed, name), so a tensor's initial value
// does not depend on what else was registered before it.
template <typename Scalar>
class ParamSet {
 public:
  explicit ParamSet(std::uint64_t seed = 0) : seed_(seed) {}

  // Registers an existing tensor; names must be unique.
  Tensor<Scalar>& add(const std::string& name, Tensor<Scalar> value);
  // Truncated normal (cut at two standard deviations).
  Tensor<Scalar>& normal(const std::string& name, Shape shape, double stddev = 0.02);
  Tensor<Scalar>& zeros(const std::string& name, Shape shape);
  Tensor<Scalar>& ones(const std::string& name, Shape shape);

  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  const Tensor<Scalar>& at(const std::string& name) const;
  Tensor<Scalar>& at(const std::string& name);

  std::size_t size() const { return tensors_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<Scalar>>& tensors() { return tensors_; }
  const std::vector<Tensor<Scalar>>& tensors() const { return tensors_; }
  Index parameter_count() const;
  std::uint64_t seed() const { return seed_; }

  void zero_grad();
  // Deep copy with fresh storage (optionally in another precision).
  template <typename Other = Scalar>
  ParamSet<Other> clone() const {
    ParamSet<Other> out(seed_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto t = tensors_[i].template cast<Other>();
      t.set_requires_grad(true);
      out.add(names_[i], std::move(t));
    }
    return out;
  }

 private:
  std::uint64_t seed_;
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> tensors_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

extern template class ParamSet<float>;
extern template class ParamSet<double>;

}  // namespace tfgrasp
