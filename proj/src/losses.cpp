// SPDX-License-Identifier: Apache-2.0
#include "psl/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "psl/errors.hpp"
#include "psl/functional.hpp"
#include "psl/kernels.hpp"

namespace psl {

namespace {

std::vector<double> softmax_row(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - top);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

double floored_log(double v) { return std::log(std::max(v, kernels::kLogFloor)); }

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("loss: logits must be [B x C]");
  if (logits.rows() == 0) throw DomainError("loss: empty batch");
  if (labels.size() != logits.rows()) throw ShapeError("loss: label count does not match batch");
}

// Runs the committee forward over `features` and returns the per-peer softmax rows
// packed as [peers x rows x classes].
std::vector<double> committee_probs(const std::vector<MlpModel>& peers, const Tensor& features) {
  const std::size_t rows = features.rows();
  const std::size_t classes = peers.front().output_dim();
  std::vector<double> packed(peers.size() * rows * classes);
  for (std::size_t j = 0; j < peers.size(); ++j) {
    if (peers[j].output_dim() != classes) throw ShapeError("committee: class count differs");
    Tensor probs = softmax(forward(peers[j], features), 1.0);
    std::copy(probs.values().begin(), probs.values().end(), packed.begin() + j * rows * classes);
  }
  return packed;
}

}  // namespace

RankingVariant parse_ranking_variant(const std::string& name) {
  if (name == "intended") return RankingVariant::Intended;
  if (name == "literal") return RankingVariant::Literal;
  throw DomainError("unknown out_of_class_variant '" + name + "'");
}

std::string to_string(RankingVariant variant) {
  return variant == RankingVariant::Intended ? "intended" : "literal";
}

void PslHyper::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("psl: alpha must be in [0,1]");
  if (!(tau > 0.0)) throw DomainError("psl: tau must be positive");
  if (!(xi >= 0.0)) throw DomainError("psl: xi must be non-negative");
  if (peers < 1) throw DomainError("psl: need at least one peer");
}

LossNode task_loss(const Tensor& teacher_logits, std::span<const int> labels) {
  check_labels(teacher_logits, labels);
  const std::size_t rows = teacher_logits.rows();
  const std::size_t classes = teacher_logits.cols();
  Tensor probs = softmax(teacher_logits, 1.0);
  Tensor targets = one_hot(labels, classes);
  LossNode node{cross_entropy(probs, targets), Tensor::matrix(rows, classes)};
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    node.logit_grad[i] = (probs[i] - targets[i]) * inv;
  }
  return node;
}

LossNode in_class_loss(const Tensor& peer_logits, const Tensor& teacher_logits,
                       std::span<const int> labels, const PslHyper& hyper) {
  check_labels(peer_logits, labels);
  if (teacher_logits.shape() != peer_logits.shape()) {
    throw ShapeError("in_class_loss: teacher and peer logits differ in shape");
  }
  const std::size_t rows = peer_logits.rows();
  const std::size_t classes = peer_logits.cols();
  const double alpha = hyper.alpha;
  const double tau = hyper.tau;

  Tensor targets = one_hot(labels, classes);
  Tensor peer_probs = softmax(peer_logits, 1.0);
  Tensor peer_soft = softmax(peer_logits, tau);
  Tensor teacher_soft = softmax(teacher_logits, tau);

  LossNode node;
  node.value = (1.0 - alpha) * cross_entropy(peer_probs, targets) +
               alpha * tau * tau * cross_entropy(peer_soft, teacher_soft);
  node.logit_grad = Tensor::matrix(rows, classes);
  const double inv = 1.0 / static_cast<double>(rows);
  for (std::size_t i = 0; i < peer_probs.size(); ++i) {
    node.logit_grad[i] = ((1.0 - alpha) * (peer_probs[i] - targets[i]) +
                          alpha * tau * (peer_soft[i] - teacher_soft[i])) *
                         inv;
  }
  return node;
}

double discrepancy(const std::vector<std::vector<double>>& peer_probs) {
  double total = 0.0;
  for (std::size_t j = 0; j < peer_probs.size(); ++j) {
    for (std::size_t k = 0; k < peer_probs.size(); ++k) {
      if (j != k) total += kl_div(peer_probs[j], peer_probs[k]);
    }
  }
  return total;
}

DiscrepancyNode discrepancy_node(const std::vector<std::vector<double>>& peer_logit_rows) {
  const std::size_t peers = peer_logit_rows.size();
  std::vector<std::vector<double>> probs;
  probs.reserve(peers);
  for (const auto& row : peer_logit_rows) {
    if (row.size() != peer_logit_rows.front().size()) {
      throw ShapeError("discrepancy: distribution length mismatch");
    }
    probs.push_back(softmax_row(row));
  }
  const std::size_t classes = peers ? probs.front().size() : 0;

  DiscrepancyNode node;
  node.value = discrepancy(probs);
  node.logit_grads.assign(peers, std::vector<double>(classes, 0.0));
  std::vector<double> g(classes);
  for (std::size_t m = 0; m < peers; ++m) {
    auto& grad = node.logit_grads[m];
    const auto& pm = probs[m];
    for (std::size_t k = 0; k < peers; ++k) {
      if (k == m) continue;
      // m as the first argument: KL(p_m || p_k), through the softmax Jacobian.
      double mean = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        g[c] = floored_log(pm[c]) - floored_log(probs[k][c]);
        mean += pm[c] * g[c];
      }
      for (std::size_t c = 0; c < classes; ++c) grad[c] += pm[c] * (g[c] - mean);
      // m as the second argument: KL(p_k || p_m) has dz_m = p_m - p_k.
      for (std::size_t c = 0; c < classes; ++c) grad[c] += pm[c] - probs[k][c];
    }
  }
  return node;
}

ConsensusPartition partition_consensus(const std::vector<Tensor>& peer_logits,
                                       std::span<const DatumId> ids) {
  if (peer_logits.size() < 2) throw DomainError("partition_consensus: needs at least two peers");
  const std::size_t rows = peer_logits.front().rows();
  if (ids.size() != rows) throw ShapeError("partition_consensus: id count does not match batch");
  for (const auto& t : peer_logits) {
    if (t.shape() != peer_logits.front().shape()) {
      throw ShapeError("partition_consensus: peer logits differ in shape");
    }
  }
  ConsensusPartition part;
  std::vector<std::size_t> votes(peer_logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < peer_logits.size(); ++j) votes[j] = argmax(peer_logits[j].row(r));
    std::sort(votes.begin(), votes.end());
    const bool agree = std::adjacent_find(votes.begin(), votes.end()) != votes.end();
    (agree ? part.agree_ids : part.disagree_ids).push_back(ids[r]);
  }
  return part;
}

RankingLoss out_of_class_loss(double d_disagree, double d_agree, double xi,
                              RankingVariant variant) {
  const double sign =
      variant == RankingVariant::Intended ? 1.0 : (d_disagree > d_agree ? 1.0 : -1.0);
  const double hinge = -sign * (d_disagree - d_agree) + xi;
  if (hinge <= 0.0) return {};
  return {hinge, -sign, sign};
}

CommitteeLoss out_of_class_pair_loss(const std::vector<std::vector<double>>& agree_rows,
                                     const std::vector<std::vector<double>>& disagree_rows,
                                     double xi, RankingVariant variant) {
  if (agree_rows.size() != disagree_rows.size() || agree_rows.empty()) {
    throw ShapeError("out_of_class_pair_loss: peer count mismatch");
  }
  const DiscrepancyNode d_agree = discrepancy_node(agree_rows);
  const DiscrepancyNode d_disagree = discrepancy_node(disagree_rows);
  const RankingLoss rank = out_of_class_loss(d_disagree.value, d_agree.value, xi, variant);

  CommitteeLoss out;
  out.value = rank.value;
  const std::size_t classes = agree_rows.front().size();
  for (std::size_t j = 0; j < agree_rows.size(); ++j) {
    Tensor g = Tensor::matrix(2, classes);
    for (std::size_t c = 0; c < classes; ++c) {
      g(0, c) = rank.grad_agree * d_agree.logit_grads[j][c];
      g(1, c) = rank.grad_disagree * d_disagree.logit_grads[j][c];
    }
    out.logit_grads.push_back(std::move(g));
  }
  return out;
}

std::vector<SamplingScore> sampling_scores(const std::vector<MlpModel>& peers,
                                           const Tensor& features, std::span<const DatumId> ids) {
  if (peers.empty()) throw DomainError("sampling_scores: no peers");
  if (ids.empty()) return {};
  if (ids.size() != features.rows()) throw ShapeError("sampling_scores: id count mismatch");
  if (peers.size() == 1) return entropy_scores(peers, features, ids);

  const std::size_t rows = features.rows();
  const std::size_t classes = peers.front().output_dim();
  const std::vector<double> probs = committee_probs(peers, features);
  std::vector<double> values(rows);
  kernels::pairwise_kl_rows(probs, peers.size(), rows, classes, values);

  std::vector<SamplingScore> scores(rows);
  for (std::size_t r = 0; r < rows; ++r) scores[r] = {ids[r], values[r]};
  return scores;
}

double entropy_score(std::span<const double> probs) { return entropy(probs); }

std::vector<SamplingScore> entropy_scores(const std::vector<MlpModel>& peers,
                                          const Tensor& features, std::span<const DatumId> ids) {
  if (peers.empty()) throw DomainError("entropy_scores: no peers");
  if (ids.empty()) return {};
  if (ids.size() != features.rows()) throw ShapeError("entropy_scores: id count mismatch");
  const std::size_t rows = features.rows();
  const std::size_t classes = peers.front().output_dim();
  const std::vector<double> probs = committee_probs(peers, features);
  std::vector<SamplingScore> scores(rows);
  std::vector<double> mean(classes);
  for (std::size_t r = 0; r < rows; ++r) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (std::size_t j = 0; j < peers.size(); ++j) {
      for (std::size_t c = 0; c < classes; ++c) mean[c] += probs[(j * rows + r) * classes + c];
    }
    for (double& v : mean) v /= static_cast<double>(peers.size());
    scores[r] = {ids[r], entropy_score(mean)};
  }
  return scores;
}

Selection select_top_b(std::span<const SamplingScore> scores, std::size_t b) {
  if (b == 0) throw DomainError("select_top_b: b must be positive");
  std::vector<SamplingScore> ranked(scores.begin(), scores.end());
  Selection sel;
  if (b > ranked.size()) {
    sel.truncated = true;
    b = ranked.size();
  }
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(b), ranked.end(),
                    [](const SamplingScore& a, const SamplingScore& c) {
                      if (a.score != c.score) return a.score > c.score;
                      return a.id < c.id;
                    });
  sel.ids.reserve(b);
  for (std::size_t i = 0; i < b; ++i) sel.ids.push_back(ranked[i].id);
  return sel;
}

Selection random_select(std::span<const DatumId> pool, std::size_t b, std::uint64_t seed) {
  if (b == 0) throw DomainError("random_select: b must be positive");
  std::vector<DatumId> ids(pool.begin(), pool.end());
  Selection sel;
  if (b > ids.size()) {
    sel.truncated = true;
    b = ids.size();
  }
  // Partial Fisher-Yates: the first b slots end up a uniform sample.
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(b);
  sel.ids = std::move(ids);
  return sel;
}

}  // namespace psl
