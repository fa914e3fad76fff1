#include "flowcp/tensor.hpp"

#include <cmath>

#include "flowcp/errors.hpp"

namespace flowcp::num {

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Tensor2: data length does not match rows*cols");
  }
}

bool Tensor2::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace flowcp::num
