#include "tfgrasp/params.hpp"

#include <cmath>
#include <random>

#include "tfgrasp/random.hpp"

namespace tfgrasp {
namespace {

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar>& ParamSet<Scalar>::add(const std::string& name, Tensor<Scalar> value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  value.set_requires_grad(true);
  lookup_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(value));
  return tensors_.back();
}

template <typename Scalar>
Tensor<Scalar>& ParamSet<Scalar>::normal(const std::string& name, Shape shape, double stddev) {
  const std::uint64_t key = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                    static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  Rng rng(seq);
  std::vector<Scalar> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    v = static_cast<Scalar>(z * stddev);
  }
  return add(name, Tensor<Scalar>(std::move(shape), std::move(values)));
}

template <typename Scalar>
Tensor<Scalar>& ParamSet<Scalar>::zeros(const std::string& name, Shape shape) {
  return add(name, Tensor<Scalar>::zeros(std::move(shape)));
}

template <typename Scalar>
Tensor<Scalar>& ParamSet<Scalar>::ones(const std::string& name, Shape shape) {
  return add(name, Tensor<Scalar>::full(std::move(shape), Scalar(1)));
}

template <typename Scalar>
const Tensor<Scalar>& ParamSet<Scalar>::at(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

template <typename Scalar>
Tensor<Scalar>& ParamSet<Scalar>::at(const std::string& name) {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

template <typename Scalar>
Index ParamSet<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <typename Scalar>
void ParamSet<Scalar>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template class ParamSet<float>;
template class ParamSet<double>;

}  // namespace tfgrasp
