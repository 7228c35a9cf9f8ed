// SPDX-License-Identifier: Apache-2.0
#include "psl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "psl/losses.hpp"

namespace psl {

GradCheckReport grad_check(const MlpModel& model, const LossFn& loss, double tolerance,
                           double step) {
  GradCheckReport report;
  const LossEval base = loss(model);
  const ParamSet theta = model.params();
  MlpModel probe = model;
  ParamSet shifted = theta;
  auto flat = shifted.flat().data();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double original = flat[i];
    flat[i] = original + step;
    probe.set_params(shifted);
    const double up = loss(probe).value;
    flat[i] = original - step;
    probe.set_params(shifted);
    const double down = loss(probe).value;
    flat[i] = original;

    const double numeric = (up - down) / (2.0 * step);
    const double analytic = base.grad.flat()[i];
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

namespace {

constexpr std::size_t kInputs = 3;
constexpr std::size_t kClasses = 4;
constexpr std::size_t kBatch = 6;

struct Fixture {
  MlpModel teacher;
  std::vector<MlpModel> peers;
  Tensor batch;
  std::vector<int> labels;
  Tensor agree_x;
  Tensor disagree_x;
};

Fixture make_fixture(std::uint64_t seed) {
  Fixture f;
  f.teacher = MlpModel::create({kInputs, 8, 6, kClasses}, seed);
  for (std::uint64_t j = 0; j < 3; ++j) {
    f.peers.push_back(MlpModel::create({kInputs, 5, kClasses}, seed + 101 * (j + 1)));
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.5);
  f.batch = Tensor::matrix(kBatch, kInputs);
  for (double& v : f.batch.data()) v = normal(rng);
  for (std::size_t i = 0; i < kBatch; ++i) f.labels.push_back(static_cast<int>(i % kClasses));
  f.agree_x = Tensor::matrix(1, kInputs);
  f.disagree_x = Tensor::matrix(1, kInputs);
  for (double& v : f.agree_x.data()) v = normal(rng);
  for (double& v : f.disagree_x.data()) v = normal(rng);
  return f;
}

LossFn corrupted(LossFn fn, bool corrupt) {
  if (!corrupt) return fn;
  return [fn = std::move(fn)](const MlpModel& m) {
    LossEval e = fn(m);
    for (double& g : e.grad.flat().data()) g = g * 1.05 + 1e-3;
    return e;
  };
}

LossFn task_case(const Fixture& f) {
  return [&f](const MlpModel& teacher) {
    ForwardCache cache;
    const Tensor logits = forward(teacher, f.batch, cache);
    LossNode node = task_loss(logits, f.labels);
    return LossEval{node.value, backward(teacher, cache, node.logit_grad)};
  };
}

LossFn in_class_case(const Fixture& f, double alpha) {
  return [&f, alpha](const MlpModel& peer) {
    PslHyper hyper;
    hyper.alpha = alpha;
    const Tensor teacher_logits = forward(f.teacher, f.batch);
    ForwardCache cache;
    const Tensor logits = forward(peer, f.batch, cache);
    LossNode node = in_class_loss(logits, teacher_logits, f.labels, hyper);
    return LossEval{node.value, backward(peer, cache, node.logit_grad)};
  };
}

std::vector<double> row_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

// Ranking loss as a function of peer `which`, the other peers held fixed.
LossFn ranking_case(const Fixture& f, std::size_t which, double xi, RankingVariant variant) {
  return [&f, which, xi, variant](const MlpModel& peer) {
    std::vector<std::vector<double>> agree_rows, disagree_rows;
    for (std::size_t j = 0; j < f.peers.size(); ++j) {
      const MlpModel& m = j == which ? peer : f.peers[j];
      agree_rows.push_back(row_of(forward(m, f.agree_x)));
      disagree_rows.push_back(row_of(forward(m, f.disagree_x)));
    }
    CommitteeLoss loss = out_of_class_pair_loss(agree_rows, disagree_rows, xi, variant);
    Tensor pair = Tensor::matrix(2, kInputs);
    std::copy(f.agree_x.values().begin(), f.agree_x.values().end(), pair.row(0).begin());
    std::copy(f.disagree_x.values().begin(), f.disagree_x.values().end(), pair.row(1).begin());
    ForwardCache cache;
    forward(peer, pair, cache);
    return LossEval{loss.value, backward(peer, cache, loss.logit_grads[which])};
  };
}

double committee_discrepancy(const Fixture& f, const Tensor& x) {
  std::vector<std::vector<double>> rows;
  for (const auto& p : f.peers) rows.push_back(row_of(forward(p, x)));
  return discrepancy_node(rows).value;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  Fixture f = make_fixture(options.seed);
  // Make x_D the lower-discrepancy point so the ranking hinge is active.
  if (committee_discrepancy(f, f.disagree_x) > committee_discrepancy(f, f.agree_x)) {
    std::swap(f.agree_x, f.disagree_x);
  }
  const double gap = committee_discrepancy(f, f.agree_x) - committee_discrepancy(f, f.disagree_x);

  std::vector<GradCheckCase> cases;
  auto run = [&](std::string name, const MlpModel& model, LossFn fn) {
    cases.push_back({std::move(name),
                     grad_check(model, corrupted(std::move(fn), options.corrupt_gradient),
                                options.tolerance)});
  };

  run("task_loss", f.teacher, task_case(f));
  for (double alpha : {0.0, 0.1, 1.0}) {
    std::string name = "in_class_loss(alpha=" + std::string(alpha == 0.0 ? "0" : alpha == 1.0 ? "1" : "0.1") + ")";
    run(name, f.peers[0], in_class_case(f, alpha));
  }
  for (std::size_t j = 0; j < f.peers.size(); ++j) {
    run("out_of_class_loss(intended, peer " + std::to_string(j) + ")", f.peers[j],
        ranking_case(f, j, 0.01, RankingVariant::Intended));
    // The literal variant only has a non-zero gradient here when xi exceeds the gap.
    run("out_of_class_loss(literal, peer " + std::to_string(j) + ")", f.peers[j],
        ranking_case(f, j, gap + 0.5, RankingVariant::Literal));
  }
  return cases;
}

}  // namespace psl
