// SPDX-License-Identifier: Apache-2.0
#include "psl/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "psl/errors.hpp"

namespace psl {

namespace {
std::size_t extent_product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(extent_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != extent_product(shape_)) {
    throw ShapeError("tensor: value count does not match shape");
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw ShapeError("tensor: expected rank 1 or 2");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw ShapeError("tensor: expected rank 1 or 2");
  return shape_[1];
}

bool Tensor::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::gather_rows(std::span<const std::size_t> ids) const {
  const std::size_t c = cols();
  Tensor out = matrix(ids.size(), c);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] >= rows()) throw ShapeError("gather_rows: row index out of range");
    auto src = row(ids[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

}  // namespace psl
