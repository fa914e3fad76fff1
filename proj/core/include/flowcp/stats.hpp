#pragma once

#include <span>

#include "flowcp/rng.hpp"
#include "flowcp/tensor.hpp"

namespace flowcp::num {

/// k-th smallest calibration score with k = ceil((1-alpha)(n+1)); returns
/// +infinity when k > n (the prediction set degenerates to the whole label
/// space). Ties resolved by the order statistic itself, no interpolation.
double conformal_quantile(std::span<const double> scores, double alpha);

/// n independent rows, entry (i, j) ~ Normal(mean[j], stddev[j]^2), drawn
/// row-major from the stream. stddev entries must be positive.
Tensor2 gaussian_sample(RngStream& rng, std::span<const double> mean,
                        std::span<const double> stddev, std::size_t n);

}  // namespace flowcp::num
