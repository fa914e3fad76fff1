#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace flowcp::num {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators plus step counter; shapes must match the
/// flat parameter vector they were created for.
struct OptimizerState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected adaptive-moment update, in place. Throws TrainingError
/// naming the step if any gradient entry is non-finite.
void adam_step(std::vector<double>& params, std::span<const double> grads, OptimizerState& state,
               const AdamConfig& config);

}  // namespace flowcp::num
