// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>

#include "psl/mlp.hpp"

namespace psl {

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  /// Throws DomainError when a field is outside its range.
  void validate() const;
};

/// Momentum buffer of one model. Empty until the first step.
struct SgdState {
  std::optional<ParamSet> velocity;
};

/// v <- momentum * v + grads + weight_decay * theta;  theta <- theta - lr * v
void sgd_step(MlpModel& model, const ParamSet& grads, const SgdConfig& cfg, SgdState& state);

}  // namespace psl
