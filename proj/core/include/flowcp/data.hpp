#pragma once

#include <array>
#include <string>
#include <vector>

#include "flowcp/rng.hpp"
#include "flowcp/tensor.hpp"

namespace flowcp::data {

/// Per-feature and target moments fitted on a training split and applied to
/// every split of the same client (no leakage). A near-zero std falls back
/// to 1 so constant columns survive.
struct StandardizeStats {
  std::vector<double> x_mean;
  std::vector<double> x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
};

struct Dataset {
  num::Tensor2 x;
  std::vector<double> y;
  std::vector<std::string> feature_names;
  StandardizeStats stats;  // the stats this data was standardized with (identity if raw)

  std::size_t n() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
};

StandardizeStats fit_stats(const Dataset& train);
Dataset apply_stats(const Dataset& ds, const StandardizeStats& stats);

/// Seeded shuffle then partition by fractions (must be positive, sum ~ 1).
/// Throws ArgumentError if any resulting split would be empty.
std::array<Dataset, 3> split(const Dataset& ds, const std::array<double, 3>& fractions,
                             num::RngStream& rng);

}  // namespace flowcp::data
