#pragma once

#include <span>
#include <vector>

#include "tfgrasp/tensor.hpp"

namespace tfgrasp {

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-2;
};

// Moments for a list of parameters. `step` counts completed updates.
template <typename Scalar>
struct AdamWState {
  AdamWOptions options;
  std::vector<std::vector<Scalar>> m;
  std::vector<std::vector<Scalar>> v;
  long step = 0;
};

template <typename Scalar>
AdamWState<Scalar> make_adamw_state(std::span<const Tensor<Scalar>> params, AdamWOptions options);

// Decoupled weight decay update of a single parameter block with bias
// correction for update number `step` (1-based):
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + lambda p)
template <typename Scalar>
void adamw_update(std::span<Scalar> param, std::span<const Scalar> grad, std::span<Scalar> m,
                  std::span<Scalar> v, long step, const AdamWOptions& options);

// One optimizer step over every parameter, using each tensor's gradient
// (parameters without a gradient are treated as having a zero gradient).
template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, AdamWState<Scalar>& state);

}  // namespace tfgrasp
