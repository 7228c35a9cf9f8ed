// SPDX-License-Identifier: Apache-2.0
#include "psl/sgd.hpp"

#include "psl/errors.hpp"

namespace psl {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw DomainError("sgd: learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DomainError("sgd: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw DomainError("sgd: weight_decay must be non-negative");
  if (batch_size == 0) throw DomainError("sgd: batch_size must be positive");
}

void sgd_step(MlpModel& model, const ParamSet& grads, const SgdConfig& cfg, SgdState& state) {
  ParamSet theta = model.params();
  if (!theta.same_layout(grads)) throw ShapeError("sgd_step: gradient layout mismatch");
  if (!state.velocity) state.velocity = ParamSet::zeros_like(model);
  if (!state.velocity->same_layout(grads)) throw ShapeError("sgd_step: velocity layout mismatch");

  auto v = state.velocity->flat().data();
  auto g = grads.flat().data();
  auto p = theta.flat().data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    v[i] = cfg.momentum * v[i] + g[i] + cfg.weight_decay * p[i];
    p[i] -= cfg.learning_rate * v[i];
  }
  model.set_params(theta);
}

}  // namespace psl
