// SPDX-License-Identifier: Apache-2.0
#pragma once

// Peer-study objectives, the consensus split, and the acquisition criteria.
//
// Losses are expressed on logits: each returns its value together with
// dLoss/dLogits for every model it depends on. Callers turn those into
// parameter gradients with psl::backward. Teacher logits enter as plain
// tensors, so no loss here can produce a gradient for the teacher.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "psl/mlp.hpp"
#include "psl/tensor.hpp"

namespace psl {

using DatumId = std::size_t;

enum class RankingVariant {
  Intended,  // max(0, -(d_D - d_A) + xi)
  Literal,   // max(0, -s (d_D - d_A) + xi), s = +1 if d_D > d_A else -1
};

RankingVariant parse_ranking_variant(const std::string& name);
std::string to_string(RankingVariant variant);

struct PslHyper {
  double alpha = 0.1;
  double tau = 4.0;
  double xi = 0.01;
  std::size_t peers = 2;
  RankingVariant variant = RankingVariant::Intended;

  void validate() const;
};

/// Loss value and its gradient w.r.t. one model's logits for a batch.
struct LossNode {
  double value = 0.0;
  Tensor logit_grad;
};

/// Loss depending on several peers; logit_grads[j] belongs to peer j.
struct CommitteeLoss {
  double value = 0.0;
  std::vector<Tensor> logit_grads;
};

/// Mean cross-entropy of softmax(logits) against integer labels.
LossNode task_loss(const Tensor& teacher_logits, std::span<const int> labels);

/// (1 - alpha) CE(y, softmax(peer)) + alpha tau^2 CE(softmax(teacher / tau), softmax(peer / tau)),
/// averaged over the batch. One peer; the caller sums over peers.
LossNode in_class_loss(const Tensor& peer_logits, const Tensor& teacher_logits,
                       std::span<const int> labels, const PslHyper& hyper);

/// Sum over ordered pairs j != k of KL(p_j || p_k). Throws ShapeError on length mismatch.
double discrepancy(const std::vector<std::vector<double>>& peer_probs);

/// Discrepancy of one datum from its per-peer logit rows (temperature 1), with
/// the gradient w.r.t. each peer's logit row.
struct DiscrepancyNode {
  double value = 0.0;
  std::vector<std::vector<double>> logit_grads;
};
DiscrepancyNode discrepancy_node(const std::vector<std::vector<double>>& peer_logit_rows);

struct ConsensusPartition {
  std::vector<DatumId> agree_ids;     // some pair of peers shares the argmax
  std::vector<DatumId> disagree_ids;  // every peer predicts a different class
};

/// peer_logits[j] is [B x C]; ids[r] names row r. Requires at least two peers.
ConsensusPartition partition_consensus(const std::vector<Tensor>& peer_logits,
                                       std::span<const DatumId> ids);

/// Margin ranking loss between the discrepancy of a disagreeing datum (d_D) and a
/// consensus datum (d_A), with its partial derivatives.
struct RankingLoss {
  double value = 0.0;
  double grad_disagree = 0.0;  // dL/dd_D
  double grad_agree = 0.0;     // dL/dd_A
};
RankingLoss out_of_class_loss(double d_disagree, double d_agree, double xi, RankingVariant variant);

/// Ranking loss composed with discrepancy_node for one (x_A, x_D) pair.
/// agree_rows[j] / disagree_rows[j] are peer j's logits for x_A / x_D.
/// logit_grads[j] is [2 x C]: row 0 for x_A, row 1 for x_D.
CommitteeLoss out_of_class_pair_loss(const std::vector<std::vector<double>>& agree_rows,
                                     const std::vector<std::vector<double>>& disagree_rows,
                                     double xi, RankingVariant variant);

struct SamplingScore {
  DatumId id = 0;
  double score = 0.0;
};

/// Acquisition scores for the rows of `features`. Two or more peers: pairwise-KL
/// discrepancy at temperature 1. One peer: predictive entropy.
std::vector<SamplingScore> sampling_scores(const std::vector<MlpModel>& peers,
                                           const Tensor& features, std::span<const DatumId> ids);

/// Entropy baseline: entropy of the committee's mean predictive distribution.
std::vector<SamplingScore> entropy_scores(const std::vector<MlpModel>& peers,
                                          const Tensor& features, std::span<const DatumId> ids);

double entropy_score(std::span<const double> probs);

struct Selection {
  std::vector<DatumId> ids;
  bool truncated = false;  // fewer candidates than requested
};

/// Ids of the b largest scores, descending; equal scores by ascending id.
/// Throws DomainError when b == 0.
Selection select_top_b(std::span<const SamplingScore> scores, std::size_t b);

/// b ids drawn uniformly without replacement.
Selection random_select(std::span<const DatumId> pool, std::size_t b, std::uint64_t seed);

}  // namespace psl
