// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "psl/tensor.hpp"

namespace psl {

/// Row-wise softmax of logits / temperature, with max subtraction.
/// Throws DomainError if temperature <= 0.
Tensor softmax(const Tensor& logits, double temperature = 1.0);

/// Mean over rows of -sum_c targets * log(max(probs, floor)).
double cross_entropy(const Tensor& probs, const Tensor& targets);

/// KL(p || q) = sum_c p log(p / q). q is floored at kernels::kLogFloor.
double kl_div(std::span<const double> p, std::span<const double> q);

/// Shannon entropy -sum p log p, natural log.
double entropy(std::span<const double> p);

/// One-hot encode integer labels into a [labels.size() x classes] tensor.
Tensor one_hot(std::span<const int> labels, std::size_t classes);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> row);

}  // namespace psl
