#pragma once

// Test-only oracles, kept independent of the library code paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "flowcp/mlp.hpp"
#include "flowcp/tensor.hpp"

namespace flowcp::testing {

/// Central finite differences of a scalar function of a flat vector.
inline std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
    double h = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

/// Mixed absolute/relative closeness: |a-b| <= tol * max(1, |a|, |b|).
inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

/// A second MLP forward pass, written deliberately differently from the
/// library (column-major accumulation, recursion over layers).
inline std::vector<double> independent_mlp_forward(const num::MlpParams& params,
                                                   const std::vector<double>& input,
                                                   std::size_t layer = 0) {
  if (layer == params.layers.size()) return input;
  const auto& l = params.layers[layer];
  std::vector<double> out = l.bias;
  for (std::size_t c = 0; c < l.weight.cols(); ++c) {
    for (std::size_t r = 0; r < l.weight.rows(); ++r) {
      out[r] += l.weight(r, c) * input[c];
    }
  }
  if (layer + 1 < params.layers.size()) {
    for (double& v : out) v = std::tanh(v);
  }
  return independent_mlp_forward(params, out, layer + 1);
}

/// Determinant by Gaussian elimination with partial pivoting (small m).
inline double determinant(num::Tensor2 a) {
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(a(pivot, c), a(col, c));
      det = -det;
    }
    if (a(col, col) == 0.0) return 0.0;
    det *= a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double factor = a(r, col) / a(col, col);
      for (std::size_t c = col; c < n; ++c) a(r, c) -= factor * a(col, c);
    }
  }
  return det;
}

}  // namespace flowcp::testing
