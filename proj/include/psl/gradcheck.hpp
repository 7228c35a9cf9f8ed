// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "psl/mlp.hpp"

namespace psl {

struct LossEval {
  double value = 0.0;
  ParamSet grad;
};

/// Evaluates a loss and its analytic gradient at the given parameters.
using LossFn = std::function<LossEval(const MlpModel&)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Compares the analytic gradient of `loss` with central differences
///   (L(theta + h e_i) - L(theta - h e_i)) / 2h
/// for every parameter. The relative error of one coordinate is
///   |analytic - numeric| / max(|analytic| + |numeric|, 1e-6).
GradCheckReport grad_check(const MlpModel& model, const LossFn& loss, double tolerance,
                           double step = 1e-5);

struct GradCheckSuiteOptions {
  double tolerance = 1e-4;
  std::uint64_t seed = 2024;
  /// Perturbs every analytic gradient before comparison. Used to show the check can fail.
  bool corrupt_gradient = false;
};

struct GradCheckCase {
  std::string name;
  GradCheckReport report;
};

/// Runs grad_check over every loss composition used in training: the task loss,
/// the in-class loss at alpha in {0, 0.1, 1}, and the ranking loss (both variants,
/// every peer) on small seeded networks.
std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& options = {});

}  // namespace psl
