#include "flowcp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "flowcp/errors.hpp"

namespace flowcp::num {

double conformal_quantile(std::span<const double> scores, double alpha) {
  if (scores.empty()) throw ArgumentError("conformal_quantile: empty scores");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ArgumentError("conformal_quantile: alpha must be in (0,1)");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ArgumentError("conformal_quantile: non-finite score");
  }
  const std::size_t n = scores.size();
  // Nudge before ceil so that mathematically-integer ranks (e.g. 0.9 * 10)
  // do not round up through floating-point representation error.
  const double rank = (1.0 - alpha) * static_cast<double>(n + 1);
  const auto k = static_cast<std::size_t>(std::ceil(rank - 1e-9));
  if (k > n) return std::numeric_limits<double>::infinity();

  std::vector<double> sorted(scores.begin(), scores.end());
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  return sorted[k - 1];
}

Tensor2 gaussian_sample(RngStream& rng, std::span<const double> mean,
                        std::span<const double> stddev, std::size_t n) {
  if (mean.size() != stddev.size()) {
    throw ShapeError("gaussian_sample: mean/std length mismatch");
  }
  for (double s : stddev) {
    if (!(s > 0.0)) throw ArgumentError("gaussian_sample: stddev entries must be positive");
  }
  const std::size_t dim = mean.size();
  Tensor2 out(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      out(i, j) = rng.normal(mean[j], stddev[j]);
    }
  }
  return out;
}

}  // namespace flowcp::num
