#include "tfgrasp/adamw.hpp"

#include <cmath>

namespace tfgrasp {

template <typename Scalar>
AdamWState<Scalar> make_adamw_state(std::span<const Tensor<Scalar>> params, AdamWOptions options) {
  AdamWState<Scalar> state;
  state.options = options;
  for (const auto& p : params) {
    state.m.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
    state.v.emplace_back(static_cast<std::size_t>(p.numel()), Scalar(0));
  }
  return state;
}

template <typename Scalar>
void adamw_update(std::span<Scalar> param, std::span<const Scalar> grad, std::span<Scalar> m,
                  std::span<Scalar> v, long step, const AdamWOptions& o) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw ParameterError("adamw: parameter of length " + std::to_string(param.size()) +
                         " does not match gradient/moment lengths " + std::to_string(grad.size()) + "/" +
                         std::to_string(m.size()) + "/" + std::to_string(v.size()));
  }
  if (step < 1) throw ParameterError("adamw: step counter must start at 1");
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double mi = o.beta1 * m[i] + (1.0 - o.beta1) * g;
    const double vi = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
    m[i] = static_cast<Scalar>(mi);
    v[i] = static_cast<Scalar>(vi);
    const double update = (mi / c1) / (std::sqrt(vi / c2) + o.epsilon) + o.weight_decay * param[i];
    param[i] = static_cast<Scalar>(param[i] - o.learning_rate * update);
  }
}

template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, AdamWState<Scalar>& state) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ParameterError("adamw: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  const long step = state.step + 1;
  std::vector<Scalar> zeros;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    std::span<const Scalar> g = p.grad();
    if (g.empty()) {
      zeros.assign(static_cast<std::size_t>(p.numel()), Scalar(0));
      g = zeros;
    }
    adamw_update<Scalar>(p.mutable_data(), g, state.m[k], state.v[k], step, state.options);
  }
  state.step = step;
}

template AdamWState<float> make_adamw_state(std::span<const Tensor<float>>, AdamWOptions);
template AdamWState<double> make_adamw_state(std::span<const Tensor<double>>, AdamWOptions);
template void adamw_update(std::span<float>, std::span<const float>, std::span<float>, std::span<float>, long,
                           const AdamWOptions&);
template void adamw_update(std::span<double>, std::span<const double>, std::span<double>, std::span<double>, long,
                           const AdamWOptions&);
template void adamw_step(std::span<Tensor<float>>, AdamWState<float>&);
template void adamw_step(std::span<Tensor<double>>, AdamWState<double>&);

}  // namespace tfgrasp
