#include "flowcp/optim.hpp"

#include <cmath>
#include <string>

#include "flowcp/errors.hpp"

namespace flowcp::num {

void adam_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ShapeError("adam_step: parameter/gradient/state sizes disagree");
  }
  if (!(config.lr > 0.0)) throw ArgumentError("adam_step: lr must be positive");

  state.step += 1;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw TrainingError("adam_step: non-finite gradient at step " + std::to_string(state.step));
    }
  }

  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    params[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
  }
}

}  // namespace flowcp::num
