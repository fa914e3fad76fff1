#include "flowcp/data.hpp"

#include <cmath>
#include <numeric>

#include "flowcp/errors.hpp"

namespace flowcp::data {

namespace {
constexpr double kMinStd = 1e-12;
}

StandardizeStats fit_stats(const Dataset& train) {
  if (train.n() == 0) throw ArgumentError("fit_stats: empty dataset");
  const std::size_t d = train.dim();
  const auto n = static_cast<double>(train.n());

  StandardizeStats stats;
  stats.x_mean.assign(d, 0.0);
  stats.x_std.assign(d, 0.0);
  for (std::size_t i = 0; i < train.n(); ++i) {
    for (std::size_t j = 0; j < d; ++j) stats.x_mean[j] += train.x(i, j);
  }
  for (std::size_t j = 0; j < d; ++j) stats.x_mean[j] /= n;
  for (std::size_t i = 0; i < train.n(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = train.x(i, j) - stats.x_mean[j];
      stats.x_std[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    stats.x_std[j] = std::sqrt(stats.x_std[j] / n);
    if (stats.x_std[j] < kMinStd) stats.x_std[j] = 1.0;
  }

  stats.y_mean = std::accumulate(train.y.begin(), train.y.end(), 0.0) / n;
  double acc = 0.0;
  for (double v : train.y) {
    const double c = v - stats.y_mean;
    acc += c * c;
  }
  stats.y_std = std::sqrt(acc / n);
  if (stats.y_std < kMinStd) stats.y_std = 1.0;
  return stats;
}

Dataset apply_stats(const Dataset& ds, const StandardizeStats& stats) {
  if (stats.x_mean.size() != ds.dim()) throw ShapeError("apply_stats: dimension mismatch");
  Dataset out = ds;
  for (std::size_t i = 0; i < out.n(); ++i) {
    for (std::size_t j = 0; j < out.dim(); ++j) {
      out.x(i, j) = (out.x(i, j) - stats.x_mean[j]) / stats.x_std[j];
    }
    out.y[i] = (out.y[i] - stats.y_mean) / stats.y_std;
  }
  out.stats = stats;
  return out;
}

std::array<Dataset, 3> split(const Dataset& ds, const std::array<double, 3>& fractions,
                             num::RngStream& rng) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw ArgumentError("split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ArgumentError("split: fractions must sum to 1");

  const std::size_t n = ds.n();
  const auto order = rng.permutation(n);
  std::array<std::size_t, 3> sizes{};
  sizes[0] = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  sizes[1] = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (sizes[0] + sizes[1] > n) sizes[1] = n - sizes[0];
  sizes[2] = n - sizes[0] - sizes[1];
  for (std::size_t s : sizes) {
    if (s == 0) throw ArgumentError("split: a split would be empty");
  }

  std::array<Dataset, 3> out;
  std::size_t cursor = 0;
  for (std::size_t part = 0; part < 3; ++part) {
    Dataset& dst = out[part];
    dst.feature_names = ds.feature_names;
    dst.x = num::Tensor2(sizes[part], ds.dim());
    dst.y.resize(sizes[part]);
    for (std::size_t i = 0; i < sizes[part]; ++i) {
      const std::size_t src = order[cursor++];
      for (std::size_t j = 0; j < ds.dim(); ++j) dst.x(i, j) = ds.x(src, j);
      dst.y[i] = ds.y[src];
    }
  }
  return out;
}

}  // namespace flowcp::data
