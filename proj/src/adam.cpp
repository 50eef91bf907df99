#include "latnav/adam.hpp"

#include <cmath>

namespace latnav {

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m,
                 std::span<double> v, std::uint64_t step, const AdamConfig& config, double lr) {
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state,
               double lr) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " parameters but " +
                                std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->size() != grads[i]->size()) {
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has shape " +
                                  shape_string(params[i]->shape()) + ", gradient " +
                                  shape_string(grads[i]->shape()));
    }
    if (!grads[i]->all_finite()) {
      throw NonFiniteError("adam_step: non-finite gradient for parameter " + std::to_string(i) + " at step " +
                           std::to_string(state.step + 1));
    }
  }
  if (state.first_moment.empty()) {
    for (const Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  } else if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: state was built for a different parameter list");
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(params[i]->values(), grads[i]->values(), state.first_moment[i].values(),
                state.second_moment[i].values(), state.step, state.config, lr);
  }
}

}  // namespace latnav
