// SPDX-License-Identifier: Apache-2.0
#include "psl/functional.hpp"

#include <algorithm>
#include <cmath>

#include "psl/errors.hpp"
#include "psl/kernels.hpp"

namespace psl {

Tensor softmax(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw DomainError("softmax: temperature must be positive");
  Tensor out = logits;
  const std::size_t rows = logits.rows();
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = out.row(r);
    const double top = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp((v - top) / temperature);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return out;
}

double cross_entropy(const Tensor& probs, const Tensor& targets) {
  if (probs.shape() != targets.shape()) throw ShapeError("cross_entropy: shape mismatch");
  const std::size_t rows = probs.rows();
  if (rows == 0) throw DomainError("cross_entropy: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (targets[i] == 0.0) continue;
    total -= targets[i] * std::log(std::max(probs[i], kernels::kLogFloor));
  }
  return total / static_cast<double>(rows);
}

double kl_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_div: length mismatch");
  double kl = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    if (p[c] <= 0.0) continue;
    kl += p[c] * (std::log(std::max(p[c], kernels::kLogFloor)) -
                  std::log(std::max(q[c], kernels::kLogFloor)));
  }
  return std::max(kl, 0.0);
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return std::max(h, 0.0);
}

Tensor one_hot(std::span<const int> labels, std::size_t classes) {
  Tensor out = Tensor::matrix(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DomainError("one_hot: label out of range");
    }
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

}  // namespace psl
