// SPDX-License-Identifier: Apache-2.0
#pragma once

// Client/cloud orchestration.
//
// The client owns every raw datum, the pools and the peer committee. The cloud
// owns the task learner and the annotators. The two sides only talk through
// Channel::send, which appends every message to an AuditLog. The cloud never
// receives a datum's features unless the client uploaded it in an
// AnnotationRequest, and the client only uploads ids from the safe pool.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "psl/data.hpp"
#include "psl/losses.hpp"
#include "psl/mlp.hpp"
#include "psl/pools.hpp"
#include "psl/sgd.hpp"

namespace psl {

enum class Direction { ClientToCloud, CloudToClient };

enum class MessageKind {
  TeacherLogitsRequest,
  TeacherLogitsResponse,
  AnnotationRequest,
  AnnotationResponse,
  TaskModelMetrics,
  ModelUpload,
  ModelDownload,
};

std::string to_string(Direction d);
std::string to_string(MessageKind k);

struct Message {
  Direction direction = Direction::ClientToCloud;
  MessageKind kind = MessageKind::TeacherLogitsRequest;
  std::vector<DatumId> payload_ids;
  Tensor features;            // AnnotationRequest only: rows for payload_ids
  Tensor logits;              // TeacherLogitsResponse
  std::vector<int> labels;    // AnnotationResponse
  double accuracy = 0.0;      // TaskModelMetrics
};

/// ModelUpload / ModelDownload. Carries parameters and nothing else.
struct ModelTransfer {
  Direction direction = Direction::ClientToCloud;
  MessageKind kind = MessageKind::ModelUpload;
  ParamSet params;
};

struct AuditEntry {
  std::size_t seq = 0;
  std::size_t step = 0;
  Direction direction = Direction::ClientToCloud;
  MessageKind kind = MessageKind::TeacherLogitsRequest;
  std::vector<DatumId> ids;
  std::size_t feature_rows = 0;
  std::size_t param_count = 0;

  nlohmann::json to_json() const;
};

/// Append-only message record. Once sealed, further appends throw StateError.
class AuditLog {
 public:
  void append(const Message& m, std::size_t step);
  void append(const ModelTransfer& m, std::size_t step);
  /// Test hook for building violation fixtures.
  void append(AuditEntry entry);
  void seal() { sealed_ = true; }
  bool sealed() const { return sealed_; }
  const std::vector<AuditEntry>& entries() const { return entries_; }
  void write_jsonl(const std::filesystem::path& path) const;

 private:
  std::vector<AuditEntry> entries_;
  bool sealed_ = false;
};

struct AuditVerdict {
  bool pass = true;
  std::optional<AuditEntry> first_violation;
  DatumId offending_id = 0;
  std::string message;
};

/// PASS iff no client-to-cloud message ever named a protected id.
AuditVerdict audit_verify(const AuditLog& log, std::span<const DatumId> protected_ids);

enum class Strategy { Psl, Entropy, Random };
enum class Retrain { Continue, FromScratch };

Strategy parse_strategy(const std::string& s);
Retrain parse_retrain(const std::string& s);
std::string to_string(Strategy s);
std::string to_string(Retrain r);

struct RunConfig {
  std::size_t n_labelled = 20;
  std::size_t budget = 20;
  std::size_t n_final = 120;
  std::size_t epochs_per_step = 30;
  double protected_fraction = 0.9;
  std::size_t unlabelled_batch = 256;  // size of the X_U draw per epoch
  bool out_of_class = true;            // run the ranking step
  bool shared_peer_init = false;       // every peer starts from the same seed
  PslHyper hyper;
  SgdConfig sgd;
  Strategy strategy = Strategy::Psl;
  Retrain retrain = Retrain::Continue;
  std::vector<std::size_t> teacher_hidden{64, 64};
  std::vector<std::size_t> peer_hidden{16};
  std::uint64_t seed = 1;

  void validate() const;
};

/// Deterministic child seed for a named purpose.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

/// Shuffled minibatch partition of 0..count-1 used by every training loop.
std::vector<std::vector<std::size_t>> minibatch_order(std::size_t count, std::size_t batch_size,
                                                      std::mt19937_64& rng);

/// Cloud side: the task learner plus the annotators. Works only with data it was sent.
class Cloud {
 public:
  /// `annotator_truth` is consulted by simulated annotators only; `test` is the
  /// held-out evaluation set. Either may be null.
  Cloud(std::vector<std::size_t> teacher_widths, SgdConfig sgd, std::uint64_t seed, Oracle* oracle,
        const Dataset* annotator_truth, const Dataset* test);

  Message handle(const Message& request);

  /// One epoch of the task loss over the labelled data received so far.
  double train_epoch();
  double evaluate() const;
  void reinitialize();

  const MlpModel& model() const { return model_; }
  void set_params(const ParamSet& p);
  std::size_t labelled_count() const { return labels_.size(); }
  bool knows(DatumId id) const { return index_.count(id) != 0; }

 private:
  Tensor rows_for(std::span<const DatumId> ids) const;

  std::vector<std::size_t> widths_;
  SgdConfig sgd_;
  std::uint64_t seed_;
  MlpModel model_;
  SgdState state_;
  std::mt19937_64 rng_;
  Oracle* oracle_;
  const Dataset* truth_;
  const Dataset* test_;
  // Labelled store: only data uploaded in annotation requests.
  std::map<DatumId, std::size_t> index_;
  std::vector<double> features_;
  std::vector<int> labels_;
  std::size_t dim_ = 0;
};

/// The only path between client and cloud.
class Channel {
 public:
  Channel(Cloud& cloud, AuditLog& log) : cloud_(cloud), log_(log) {}
  Message send(const Message& request);
  /// Records a message that does not need a cloud reply (metrics, model exchange).
  void record(const Message& m) { log_.append(m, step_); }
  void record(const ModelTransfer& m) { log_.append(m, step_); }
  void set_step(std::size_t step) { step_ = step; }
  std::size_t step() const { return step_; }

 private:
  Cloud& cloud_;
  AuditLog& log_;
  std::size_t step_ = 0;
};

struct EpochStats {
  double teacher_loss = 0.0;
  double in_class_loss = 0.0;
  double out_of_class_loss = 0.0;
  std::size_t agree = 0;
  std::size_t disagree = 0;
  bool out_of_class_skipped = false;
  std::uint64_t teacher_checksum_before_unlabelled = 0;
  std::uint64_t teacher_checksum_after_unlabelled = 0;
};

/// Client side: local data, pools and peer committee.
class Client {
 public:
  Client(const Dataset& local, const RunConfig& cfg, Channel& channel);

  /// Draws the pools and has the initial labelled pool annotated.
  void initialize();
  /// Peers study the labelled pool with the teacher's soft targets. Returns the mean loss.
  double study_labelled();
  /// Peers study an unlabelled draw from the whole unlabelled pool (protected included,
  /// it never leaves the client). Fills the partition and ranking fields of `stats`.
  void study_unlabelled(EpochStats& stats);
  /// Scores the safe pool and returns up to `count` ids to annotate.
  Selection propose(std::size_t count, double* mean_score);
  /// Uploads the ids for annotation and moves them into the labelled pool.
  void annotate(std::span<const DatumId> ids);
  void reinitialize_peers();

  const PoolState& pool() const { return pool_; }
  const std::vector<MlpModel>& peers() const { return peers_; }
  std::vector<MlpModel>& peers() { return peers_; }
  const Dataset& data() const { return local_; }

 private:
  const Dataset& local_;
  RunConfig cfg_;
  Channel& channel_;
  PoolState pool_;
  std::vector<MlpModel> peers_;
  std::vector<SgdState> peer_states_;
  std::mt19937_64 rng_;
  std::size_t proposals_ = 0;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t labelled_count = 0;
  double teacher_accuracy = 0.0;
  double mean_score = 0.0;
  std::size_t agree = 0;
  std::size_t disagree = 0;
  std::size_t out_of_class_skipped = 0;
  std::vector<DatumId> selected;

  nlohmann::json to_json() const;
};

struct RunReport {
  std::vector<StepRecord> steps;
  AuditLog audit;
  std::vector<DatumId> protected_ids;
  bool exhausted = false;
  std::vector<std::string> warnings;
  bool teacher_isolated = true;  // checksum unchanged across every unlabelled phase
  std::vector<MlpModel> final_peers;
  std::optional<MlpModel> final_teacher;

  double final_accuracy() const { return steps.empty() ? 0.0 : steps.back().teacher_accuracy; }
  std::vector<std::vector<DatumId>> selections() const;
};

/// A complete single-client session, steppable one epoch at a time.
class Session {
 public:
  /// `teacher_hidden` overrides cfg.teacher_hidden (the federated helper uses the peer shape).
  Session(const RunConfig& cfg, const Dataset& train, const Dataset& test, Oracle& oracle,
          std::optional<std::vector<std::size_t>> teacher_hidden = std::nullopt);

  void initialize();
  /// Teacher epoch on the cloud, then the peers' epoch on the client.
  EpochStats run_epoch();
  Cloud& cloud() { return cloud_; }
  Client& client() { return client_; }
  AuditLog& audit() { return audit_; }
  Channel& channel() { return channel_; }

 private:
  AuditLog audit_;
  Cloud cloud_;
  Channel channel_;
  Client client_;
};

using StepObserver = std::function<void(const StepRecord&)>;

/// Alternates training and acquisition until the labelled pool reaches n_final.
/// `on_step` sees every step record as soon as it is complete.
RunReport run_acquisition_loop(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                               Oracle& oracle, const StepObserver& on_step = {});

struct ConsensusBin {
  double lo = 0.0, hi = 0.0;  // discrepancy range
  std::size_t size = 0;
  std::size_t consensus = 0, consensus_correct = 0, consensus_teacher_correct = 0;
  std::size_t split = 0, split_correct = 0, split_teacher_correct = 0;

  double consensus_accuracy() const;
  double split_accuracy() const;
};

struct ConsensusReport {
  std::vector<ConsensusBin> bins;
  /// Bins where the consensus group is at least as accurate as the non-consensus group.
  /// A bin lacking one of the groups does not contradict the ordering and counts.
  std::size_t consensus_dominant_bins() const;
};

/// Sorts the evaluation data by peer discrepancy, cuts it into `bins` near-equal
/// groups and compares accuracy (of the first peer) with and without consensus.
/// When all discrepancies are equal the report has a single bin.
ConsensusReport consensus_accuracy_report(const std::vector<MlpModel>& peers, const MlpModel& teacher,
                                          const Dataset& eval, std::size_t bins = 5);

double accuracy(const MlpModel& model, const Dataset& ds);

/// metrics.jsonl, curve.csv, audit.jsonl.
struct ReportPaths {
  std::filesystem::path metrics, curve, audit;
  static ReportPaths in(const std::filesystem::path& dir);
};
void write_run_report(const RunReport& report, const ReportPaths& paths);
void write_curve_csv(const std::vector<StepRecord>& steps, const std::filesystem::path& path);
/// Re-reads metrics.jsonl into step records.
std::vector<StepRecord> read_metrics_jsonl(const std::filesystem::path& path);

}  // namespace psl
