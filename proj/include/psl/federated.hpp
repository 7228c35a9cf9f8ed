// SPDX-License-Identifier: Apache-2.0
#pragma once

// Multi-client extension. Each client runs its own PSL session in which the
// task learner is a local helper model; helpers are averaged on the server.

#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "psl/protocol.hpp"

namespace psl {

/// K disjoint shards of `ds`, a uniform random partition with sizes differing by at most one.
/// Rows keep their original relative order inside each shard.
std::vector<Dataset> split_clients(const Dataset& ds, std::size_t clients, std::uint64_t seed);

/// Elementwise mean. `weights`, if given, must hold one non-negative weight per entry.
ParamSet fed_avg(const std::vector<ParamSet>& params, std::span<const double> weights = {});

struct FedConfig {
  std::size_t clients = 4;
  std::size_t local_epochs = 30;
  std::size_t rounds = 10;
  RunConfig run;  // per-client acquisition settings; run.peer_hidden shapes helper and server

  void validate() const;
};

using OracleFactory = std::function<std::unique_ptr<Oracle>(std::size_t client)>;

struct FedReport {
  std::vector<StepRecord> rounds;  // step = round, teacher_accuracy = server accuracy
  std::vector<AuditLog> client_audits;
  std::vector<std::vector<DatumId>> client_protected;
  bool teacher_isolated = true;

  double final_accuracy() const { return rounds.empty() ? 0.0 : rounds.back().teacher_accuracy; }
};

/// Round r: every client downloads the server model into its helper, trains
/// local_epochs, runs one acquisition step while below n_final and uploads the
/// helper. The server averages the uploads and is evaluated on `test`.
/// Round 0 is the untrained server model.
FedReport run_federated(const FedConfig& cfg, const Dataset& train, const Dataset& test,
                        const OracleFactory& make_oracle);

/// metrics.jsonl, curve.csv and audit.client<k>.jsonl in `dir`.
void write_fed_report(const FedReport& report, const std::filesystem::path& dir);

}  // namespace psl
