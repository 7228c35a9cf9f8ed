// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "psl/data.hpp"
#include "psl/losses.hpp"

namespace psl {

/// Labelled pool, unlabelled pool and the protected subset of the unlabelled pool.
/// The safe pool is everything unlabelled that is not protected.
class PoolState {
 public:
  PoolState() = default;
  /// All n data unlabelled; `protected_ids` marked protected.
  PoolState(std::size_t n, std::span<const DatumId> protected_ids);

  std::size_t size() const { return status_.size(); }
  const std::vector<DatumId>& labelled_ids() const { return labelled_ids_; }  // insertion order
  const std::vector<int>& labelled_labels() const { return labelled_labels_; }
  std::vector<DatumId> unlabelled_ids() const;  // ascending
  std::vector<DatumId> protected_ids() const;   // ascending
  const std::vector<DatumId>& safe_ids() const { return safe_ids_; }  // ascending

  bool is_labelled(DatumId id) const { return status_.at(id) == Status::Labelled; }
  bool is_protected(DatumId id) const { return protected_.at(id); }
  bool is_safe(DatumId id) const { return id < size() && !is_labelled(id) && !is_protected(id); }

  /// Checks ids can be transferred without touching state. Throws IsolationViolation
  /// for a protected id and StateError for an id that is labelled, duplicated or unknown.
  void check_transferable(std::span<const DatumId> ids) const;

  /// Moves ids from the unlabelled to the labelled pool with the given labels.
  /// All-or-nothing: on any error the pool is unchanged.
  void transfer(std::span<const DatumId> ids, std::span<const int> labels);

  /// Throws StateError if any pool invariant is broken.
  void validate() const;

  nlohmann::json snapshot() const;
  static PoolState restore(const nlohmann::json& doc);

 private:
  enum class Status : unsigned char { Unlabelled, Labelled };
  void rebuild_safe();

  std::vector<Status> status_;
  std::vector<bool> protected_;
  std::vector<DatumId> labelled_ids_;
  std::vector<int> labelled_labels_;
  std::vector<DatumId> safe_ids_;
};

/// Label source. Oracles only ever see ids; the dataset holds the truth.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::vector<int> annotate(std::span<const DatumId> ids, const Dataset& ds) = 0;
  virtual std::string kind() const = 0;
};

class GroundTruthOracle final : public Oracle {
 public:
  std::vector<int> annotate(std::span<const DatumId> ids, const Dataset& ds) override;
  std::string kind() const override { return "ground_truth"; }
};

/// Flips each label with probability `rate`, within the true label's superclass when
/// the dataset has one with other members, otherwise to any other class.
class NoisyOracle final : public Oracle {
 public:
  NoisyOracle(double rate, std::uint64_t seed);
  std::vector<int> annotate(std::span<const DatumId> ids, const Dataset& ds) override;
  std::string kind() const override { return "noisy"; }
  double rate() const { return rate_; }

 private:
  double rate_;
  std::mt19937_64 rng_;
};

int noisy_label(int true_label, std::span<const int> superclass, std::size_t classes, double rate,
                std::mt19937_64& rng);

struct PoolPlan {
  PoolState pool;
  std::vector<DatumId> initial_ids;  // to be annotated into the labelled pool
};

/// Draws round(protected_fraction * n) protected ids uniformly from all data, then
/// n_labelled initial ids uniformly from the rest. Throws DomainError if too few remain.
PoolPlan plan_pools(std::size_t n, std::size_t n_labelled, double protected_fraction,
                    std::uint64_t seed);

/// plan_pools followed by annotating the initial ids.
PoolState init_pools(const Dataset& ds, std::size_t n_labelled, double protected_fraction,
                     std::uint64_t seed, Oracle& oracle);

/// Isolation check, oracle call, then transfer. The oracle never sees a rejected request.
void annotate_and_transfer(PoolState& pool, std::span<const DatumId> ids, Oracle& oracle,
                           const Dataset& ds);

}  // namespace psl
