// SPDX-License-Identifier: Apache-2.0
#include "psl/pools.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "psl/errors.hpp"

namespace psl {

PoolState::PoolState(std::size_t n, std::span<const DatumId> protected_ids)
    : status_(n, Status::Unlabelled), protected_(n, false) {
  for (DatumId id : protected_ids) {
    if (id >= n) throw DomainError("pool: protected id out of range");
    protected_[id] = true;
  }
  rebuild_safe();
}

std::vector<DatumId> PoolState::unlabelled_ids() const {
  std::vector<DatumId> out;
  for (DatumId id = 0; id < size(); ++id) {
    if (status_[id] == Status::Unlabelled) out.push_back(id);
  }
  return out;
}

std::vector<DatumId> PoolState::protected_ids() const {
  std::vector<DatumId> out;
  for (DatumId id = 0; id < size(); ++id) {
    if (protected_[id]) out.push_back(id);
  }
  return out;
}

void PoolState::rebuild_safe() {
  safe_ids_.clear();
  for (DatumId id = 0; id < size(); ++id) {
    if (status_[id] == Status::Unlabelled && !protected_[id]) safe_ids_.push_back(id);
  }
}

void PoolState::check_transferable(std::span<const DatumId> ids) const {
  std::vector<DatumId> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw StateError("pool: duplicate id in transfer request");
  }
  for (DatumId id : ids) {
    if (id >= size()) throw StateError("pool: unknown id " + std::to_string(id));
    if (protected_[id]) {
      throw IsolationViolation("pool: id " + std::to_string(id) + " is protected");
    }
    if (status_[id] != Status::Unlabelled) {
      throw StateError("pool: id " + std::to_string(id) + " is not in the unlabelled pool");
    }
  }
}

void PoolState::transfer(std::span<const DatumId> ids, std::span<const int> labels) {
  if (ids.size() != labels.size()) throw ShapeError("pool: id and label counts differ");
  check_transferable(ids);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    status_[ids[i]] = Status::Labelled;
    labelled_ids_.push_back(ids[i]);
    labelled_labels_.push_back(labels[i]);
  }
  rebuild_safe();
  validate();
}

void PoolState::validate() const {
  if (protected_.size() != status_.size() || labelled_ids_.size() != labelled_labels_.size()) {
    throw StateError("pool: inconsistent bookkeeping");
  }
  std::size_t labelled = 0;
  for (DatumId id = 0; id < size(); ++id) {
    if (status_[id] == Status::Labelled) {
      ++labelled;
      if (protected_[id]) throw StateError("pool: protected id in labelled pool");
    }
  }
  if (labelled != labelled_ids_.size()) throw StateError("pool: labelled count mismatch");
  for (DatumId id : labelled_ids_) {
    if (status_.at(id) != Status::Labelled) throw StateError("pool: stale labelled id");
  }
  std::size_t safe = 0;
  for (DatumId id = 0; id < size(); ++id) {
    if (status_[id] == Status::Unlabelled && !protected_[id]) {
      if (safe >= safe_ids_.size() || safe_ids_[safe] != id) throw StateError("pool: stale safe set");
      ++safe;
    }
  }
  if (safe != safe_ids_.size()) throw StateError("pool: stale safe set");
}

nlohmann::json PoolState::snapshot() const {
  nlohmann::json labelled = nlohmann::json::array();
  for (std::size_t i = 0; i < labelled_ids_.size(); ++i) {
    labelled.push_back({{"id", labelled_ids_[i]}, {"label", labelled_labels_[i]}});
  }
  return {{"size", size()}, {"protected", protected_ids()}, {"labelled", labelled}};
}

PoolState PoolState::restore(const nlohmann::json& doc) {
  const auto protected_ids = doc.at("protected").get<std::vector<DatumId>>();
  PoolState pool(doc.at("size").get<std::size_t>(), protected_ids);
  std::vector<DatumId> ids;
  std::vector<int> labels;
  for (const auto& entry : doc.at("labelled")) {
    ids.push_back(entry.at("id").get<DatumId>());
    labels.push_back(entry.at("label").get<int>());
  }
  pool.transfer(ids, labels);
  return pool;
}

std::vector<int> GroundTruthOracle::annotate(std::span<const DatumId> ids, const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (DatumId id : ids) out.push_back(ds.labels.at(id));
  return out;
}

NoisyOracle::NoisyOracle(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw DomainError("noisy oracle: rate must be in [0,1]");
}

std::vector<int> NoisyOracle::annotate(std::span<const DatumId> ids, const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (DatumId id : ids) out.push_back(noisy_label(ds.labels.at(id), ds.superclass, ds.classes, rate_, rng_));
  return out;
}

int noisy_label(int true_label, std::span<const int> superclass, std::size_t classes, double rate,
                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (!(coin(rng) < rate)) return true_label;

  std::vector<int> candidates;
  if (!superclass.empty()) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (static_cast<int>(c) != true_label && superclass[c] == superclass[static_cast<std::size_t>(true_label)]) {
        candidates.push_back(static_cast<int>(c));
      }
    }
  }
  if (candidates.empty()) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (static_cast<int>(c) != true_label) candidates.push_back(static_cast<int>(c));
    }
  }
  if (candidates.empty()) return true_label;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return candidates[pick(rng)];
}

PoolPlan plan_pools(std::size_t n, std::size_t n_labelled, double protected_fraction,
                    std::uint64_t seed) {
  if (!(protected_fraction >= 0.0 && protected_fraction < 1.0)) {
    throw DomainError("plan_pools: protected_fraction must be in [0,1)");
  }
  const auto n_protected =
      static_cast<std::size_t>(std::llround(protected_fraction * static_cast<double>(n)));
  if (n_labelled > n - n_protected) {
    throw DomainError("plan_pools: not enough non-protected data for the initial labelled pool");
  }
  std::mt19937_64 rng(seed);
  std::vector<DatumId> order(n);
  std::iota(order.begin(), order.end(), DatumId{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<DatumId> protected_ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_protected));
  std::vector<DatumId> rest(order.begin() + static_cast<std::ptrdiff_t>(n_protected), order.end());
  std::shuffle(rest.begin(), rest.end(), rng);
  rest.resize(n_labelled);
  std::sort(rest.begin(), rest.end());
  return {PoolState(n, protected_ids), std::move(rest)};
}

PoolState init_pools(const Dataset& ds, std::size_t n_labelled, double protected_fraction,
                     std::uint64_t seed, Oracle& oracle) {
  PoolPlan plan = plan_pools(ds.size(), n_labelled, protected_fraction, seed);
  annotate_and_transfer(plan.pool, plan.initial_ids, oracle, ds);
  return std::move(plan.pool);
}

void annotate_and_transfer(PoolState& pool, std::span<const DatumId> ids, Oracle& oracle,
                           const Dataset& ds) {
  pool.check_transferable(ids);
  const std::vector<int> labels = oracle.annotate(ids, ds);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= ds.classes) throw DomainError("oracle: label out of range");
  }
  pool.transfer(ids, labels);
}

}  // namespace psl
