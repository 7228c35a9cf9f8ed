// SPDX-License-Identifier: Apache-2.0
#include "psl/protocol.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>

#include "psl/errors.hpp"
#include "psl/functional.hpp"

namespace psl {

namespace {

// Seed tags.
constexpr std::uint64_t kPoolTag = 1;
constexpr std::uint64_t kTeacherTag = 2;
constexpr std::uint64_t kClientTag = 3;
constexpr std::uint64_t kCloudTag = 4;
constexpr std::uint64_t kRandomTag = 1000;
constexpr std::uint64_t kPeerTag = 100;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::size_t> widths_for(std::size_t dim, const std::vector<std::size_t>& hidden,
                                    std::size_t classes) {
  std::vector<std::size_t> w{dim};
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(classes);
  return w;
}

std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::string to_string(Direction d) {
  return d == Direction::ClientToCloud ? "client_to_cloud" : "cloud_to_client";
}

std::string to_string(MessageKind k) {
  switch (k) {
    case MessageKind::TeacherLogitsRequest: return "TeacherLogitsRequest";
    case MessageKind::TeacherLogitsResponse: return "TeacherLogitsResponse";
    case MessageKind::AnnotationRequest: return "AnnotationRequest";
    case MessageKind::AnnotationResponse: return "AnnotationResponse";
    case MessageKind::TaskModelMetrics: return "TaskModelMetrics";
    case MessageKind::ModelUpload: return "ModelUpload";
    case MessageKind::ModelDownload: return "ModelDownload";
  }
  return "Unknown";
}

nlohmann::json AuditEntry::to_json() const {
  return {{"seq", seq},           {"step", step},
          {"direction", to_string(direction)},
          {"kind", to_string(kind)},
          {"ids", ids},           {"feature_rows", feature_rows},
          {"param_count", param_count}};
}

void AuditLog::append(const Message& m, std::size_t step) {
  AuditEntry e;
  e.step = step;
  e.direction = m.direction;
  e.kind = m.kind;
  e.ids = m.payload_ids;
  e.feature_rows = m.features.empty() ? 0 : m.features.rows();
  append(std::move(e));
}

void AuditLog::append(const ModelTransfer& m, std::size_t step) {
  AuditEntry e;
  e.step = step;
  e.direction = m.direction;
  e.kind = m.kind;
  e.param_count = m.params.size();
  append(std::move(e));
}

void AuditLog::append(AuditEntry entry) {
  if (sealed_) throw StateError("audit log is sealed");
  entry.seq = entries_.size();
  entries_.push_back(std::move(entry));
}

void AuditLog::write_jsonl(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw StateError("cannot write " + path.string());
  for (const auto& e : entries_) out << e.to_json().dump() << '\n';
}

AuditVerdict audit_verify(const AuditLog& log, std::span<const DatumId> protected_ids) {
  std::vector<DatumId> guarded(protected_ids.begin(), protected_ids.end());
  std::sort(guarded.begin(), guarded.end());
  AuditVerdict verdict;
  for (const auto& e : log.entries()) {
    if (e.direction != Direction::ClientToCloud) continue;
    for (DatumId id : e.ids) {
      if (std::binary_search(guarded.begin(), guarded.end(), id)) {
        verdict.pass = false;
        verdict.first_violation = e;
        verdict.offending_id = id;
        verdict.message = "FAIL: message #" + std::to_string(e.seq) + " (" + to_string(e.kind) +
                          ", step " + std::to_string(e.step) + ") sent protected id " +
                          std::to_string(id) + " to the cloud";
        return verdict;
      }
    }
  }
  verdict.message = "PASS: " + std::to_string(log.entries().size()) +
                    " messages, no protected id sent to the cloud";
  return verdict;
}

Strategy parse_strategy(const std::string& s) {
  if (s == "psl") return Strategy::Psl;
  if (s == "entropy") return Strategy::Entropy;
  if (s == "random") return Strategy::Random;
  throw DomainError("unknown strategy '" + s + "'");
}

Retrain parse_retrain(const std::string& s) {
  if (s == "continue") return Retrain::Continue;
  if (s == "from_scratch") return Retrain::FromScratch;
  throw DomainError("unknown retrain mode '" + s + "'");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Psl: return "psl";
    case Strategy::Entropy: return "entropy";
    case Strategy::Random: return "random";
  }
  return "psl";
}

std::string to_string(Retrain r) { return r == Retrain::Continue ? "continue" : "from_scratch"; }

void RunConfig::validate() const {
  if (budget == 0) throw DomainError("run: budget b must be at least 1");
  if (n_labelled > n_final) throw DomainError("run: n_labelled must not exceed n_final");
  if (epochs_per_step == 0) throw DomainError("run: epochs_per_step must be positive");
  if (!(protected_fraction >= 0.0 && protected_fraction < 1.0)) {
    throw DomainError("run: protected_fraction must be in [0,1)");
  }
  hyper.validate();
  sgd.validate();
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  return splitmix64(base ^ splitmix64(tag));
}

std::vector<std::vector<std::size_t>> minibatch_order(std::size_t count, std::size_t batch_size,
                                                      std::mt19937_64& rng) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Cloud

Cloud::Cloud(std::vector<std::size_t> teacher_widths, SgdConfig sgd, std::uint64_t seed,
             Oracle* oracle, const Dataset* annotator_truth, const Dataset* test)
    : widths_(std::move(teacher_widths)),
      sgd_(sgd),
      seed_(seed),
      model_(MlpModel::create(widths_, derive_seed(seed, kTeacherTag))),
      rng_(derive_seed(seed, kCloudTag)),
      oracle_(oracle),
      truth_(annotator_truth),
      test_(test),
      dim_(widths_.front()) {}

void Cloud::reinitialize() {
  model_ = MlpModel::create(widths_, derive_seed(seed_, kTeacherTag));
  state_ = {};
}

void Cloud::set_params(const ParamSet& p) { model_.set_params(p); }

Tensor Cloud::rows_for(std::span<const DatumId> ids) const {
  Tensor out = Tensor::matrix(ids.size(), dim_);
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto it = index_.find(ids[k]);
    if (it == index_.end()) {
      throw StateError("cloud: id " + std::to_string(ids[k]) + " was never uploaded");
    }
    std::copy_n(features_.begin() + static_cast<std::ptrdiff_t>(it->second * dim_), dim_,
                out.row(k).begin());
  }
  return out;
}

Message Cloud::handle(const Message& request) {
  if (request.direction != Direction::ClientToCloud) throw StateError("cloud: wrong direction");
  Message reply;
  reply.direction = Direction::CloudToClient;
  switch (request.kind) {
    case MessageKind::TeacherLogitsRequest: {
      reply.kind = MessageKind::TeacherLogitsResponse;
      reply.logits = forward(model_, rows_for(request.payload_ids));
      return reply;
    }
    case MessageKind::AnnotationRequest: {
      if (!oracle_ || !truth_) throw StateError("cloud: no annotators configured");
      const auto& ids = request.payload_ids;
      if (request.features.rows() != ids.size() || request.features.cols() != dim_) {
        throw ShapeError("cloud: annotation request features do not match ids");
      }
      for (DatumId id : ids) {
        if (index_.count(id)) throw StateError("cloud: id " + std::to_string(id) + " already labelled");
      }
      reply.kind = MessageKind::AnnotationResponse;
      reply.payload_ids = ids;
      reply.labels = oracle_->annotate(ids, *truth_);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        index_[ids[k]] = labels_.size();
        labels_.push_back(reply.labels[k]);
        auto row = request.features.row(k);
        features_.insert(features_.end(), row.begin(), row.end());
      }
      return reply;
    }
    default:
      throw StateError("cloud: unsupported request " + to_string(request.kind));
  }
}

double Cloud::train_epoch() {
  const std::size_t n = labels_.size();
  if (n == 0) return 0.0;
  const Tensor all = Tensor({n, dim_}, features_);
  double total = 0.0;
  const auto batches = minibatch_order(n, sgd_.batch_size, rng_);
  for (const auto& batch : batches) {
    std::vector<int> y;
    y.reserve(batch.size());
    for (std::size_t i : batch) y.push_back(labels_[i]);
    ForwardCache cache;
    const Tensor logits = forward(model_, all.gather_rows(batch), cache);
    const LossNode loss = task_loss(logits, y);
    sgd_step(model_, backward(model_, cache, loss.logit_grad), sgd_, state_);
    total += loss.value;
  }
  return total / static_cast<double>(batches.size());
}

double Cloud::evaluate() const { return test_ ? accuracy(model_, *test_) : 0.0; }

Message Channel::send(const Message& request) {
  log_.append(request, step_);
  Message reply = cloud_.handle(request);
  log_.append(reply, step_);
  return reply;
}

// ---------------------------------------------------------------------------
// Client

Client::Client(const Dataset& local, const RunConfig& cfg, Channel& channel)
    : local_(local), cfg_(cfg), channel_(channel), rng_(derive_seed(cfg.seed, kClientTag)) {
  reinitialize_peers();
}

void Client::reinitialize_peers() {
  const auto widths = widths_for(local_.dim(), cfg_.peer_hidden, local_.classes);
  peers_.clear();
  peer_states_.assign(cfg_.hyper.peers, SgdState{});
  for (std::size_t j = 0; j < cfg_.hyper.peers; ++j) {
    const std::uint64_t tag = kPeerTag + (cfg_.shared_peer_init ? 0 : j);
    peers_.push_back(MlpModel::create(widths, derive_seed(cfg_.seed, tag)));
  }
}

void Client::initialize() {
  PoolPlan plan = plan_pools(local_.size(), cfg_.n_labelled, cfg_.protected_fraction,
                             derive_seed(cfg_.seed, kPoolTag));
  pool_ = std::move(plan.pool);
  if (!plan.initial_ids.empty()) annotate(plan.initial_ids);
}

void Client::annotate(std::span<const DatumId> ids) {
  // Refuse before anything leaves the client.
  pool_.check_transferable(ids);
  Message request;
  request.direction = Direction::ClientToCloud;
  request.kind = MessageKind::AnnotationRequest;
  request.payload_ids.assign(ids.begin(), ids.end());
  request.features = local_.features.gather_rows(ids);
  const Message reply = channel_.send(request);
  if (reply.labels.size() != ids.size()) throw StateError("client: annotation reply size mismatch");
  for (int y : reply.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= local_.classes) {
      throw DomainError("client: annotation label out of range");
    }
  }
  pool_.transfer(ids, reply.labels);
}

double Client::study_labelled() {
  const auto& ids = pool_.labelled_ids();
  const auto& labels = pool_.labelled_labels();
  if (ids.empty()) return 0.0;
  double total = 0.0;
  std::size_t terms = 0;
  for (const auto& batch : minibatch_order(ids.size(), cfg_.sgd.batch_size, rng_)) {
    Message request;
    request.direction = Direction::ClientToCloud;
    request.kind = MessageKind::TeacherLogitsRequest;
    std::vector<int> y;
    for (std::size_t i : batch) {
      request.payload_ids.push_back(ids[i]);
      y.push_back(labels[i]);
    }
    const Tensor teacher_logits = channel_.send(request).logits;
    const Tensor x = local_.features.gather_rows(request.payload_ids);
    for (std::size_t j = 0; j < peers_.size(); ++j) {
      ForwardCache cache;
      const Tensor logits = forward(peers_[j], x, cache);
      const LossNode loss = in_class_loss(logits, teacher_logits, y, cfg_.hyper);
      sgd_step(peers_[j], backward(peers_[j], cache, loss.logit_grad), cfg_.sgd, peer_states_[j]);
      total += loss.value;
      ++terms;
    }
  }
  return total / static_cast<double>(terms);
}

void Client::study_unlabelled(EpochStats& stats) {
  stats.out_of_class_skipped = true;
  if (!cfg_.out_of_class || peers_.size() < 2) return;
  const std::vector<DatumId> unlabelled = pool_.unlabelled_ids();
  if (unlabelled.empty()) return;

  const std::size_t draw = std::min(cfg_.unlabelled_batch, unlabelled.size());
  std::vector<DatumId> xu = random_select(unlabelled, draw, rng_()).ids;
  std::sort(xu.begin(), xu.end());
  const Tensor x = local_.features.gather_rows(xu);
  std::vector<Tensor> logits;
  for (const auto& p : peers_) logits.push_back(forward(p, x));
  const ConsensusPartition part = partition_consensus(logits, xu);
  stats.agree = part.agree_ids.size();
  stats.disagree = part.disagree_ids.size();
  if (part.agree_ids.empty() || part.disagree_ids.empty()) return;
  stats.out_of_class_skipped = false;

  const std::size_t labelled = pool_.labelled_ids().size();
  const std::size_t pairs = std::max<std::size_t>(1, (labelled + cfg_.sgd.batch_size - 1) / cfg_.sgd.batch_size);
  std::uniform_int_distribution<std::size_t> pick_a(0, part.agree_ids.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_d(0, part.disagree_ids.size() - 1);
  double total = 0.0;
  for (std::size_t step = 0; step < pairs; ++step) {
    const std::vector<std::size_t> pair_ids{part.agree_ids[pick_a(rng_)], part.disagree_ids[pick_d(rng_)]};
    const Tensor pair = local_.features.gather_rows(pair_ids);
    std::vector<ForwardCache> caches(peers_.size());
    std::vector<std::vector<double>> agree_rows, disagree_rows;
    for (std::size_t j = 0; j < peers_.size(); ++j) {
      const Tensor l = forward(peers_[j], pair, caches[j]);
      agree_rows.emplace_back(l.row(0).begin(), l.row(0).end());
      disagree_rows.emplace_back(l.row(1).begin(), l.row(1).end());
    }
    const CommitteeLoss loss =
        out_of_class_pair_loss(agree_rows, disagree_rows, cfg_.hyper.xi, cfg_.hyper.variant);
    total += loss.value;
    for (std::size_t j = 0; j < peers_.size(); ++j) {
      sgd_step(peers_[j], backward(peers_[j], caches[j], loss.logit_grads[j]), cfg_.sgd, peer_states_[j]);
    }
  }
  stats.out_of_class_loss = total / static_cast<double>(pairs);
}

Selection Client::propose(std::size_t count, double* mean_score) {
  const auto& safe = pool_.safe_ids();
  if (mean_score) *mean_score = 0.0;
  if (safe.empty()) return Selection{{}, true};
  ++proposals_;
  if (cfg_.strategy == Strategy::Random) {
    return random_select(safe, count, derive_seed(cfg_.seed, kRandomTag + proposals_));
  }
  const Tensor x = local_.features.gather_rows(safe);
  const auto scores = cfg_.strategy == Strategy::Psl ? sampling_scores(peers_, x, safe)
                                                     : entropy_scores(peers_, x, safe);
  if (mean_score) {
    double sum = 0.0;
    for (const auto& s : scores) sum += s.score;
    *mean_score = sum / static_cast<double>(scores.size());
  }
  return select_top_b(scores, count);
}

// ---------------------------------------------------------------------------
// Session and acquisition loop

Session::Session(const RunConfig& cfg, const Dataset& train, const Dataset& test, Oracle& oracle,
                 std::optional<std::vector<std::size_t>> teacher_hidden)
    : cloud_(widths_for(train.dim(), teacher_hidden.value_or(cfg.teacher_hidden), train.classes),
             cfg.sgd, cfg.seed, &oracle, &train, &test),
      channel_(cloud_, audit_),
      client_(train, cfg, channel_) {}

void Session::initialize() { client_.initialize(); }

EpochStats Session::run_epoch() {
  EpochStats stats;
  stats.teacher_loss = cloud_.train_epoch();
  stats.in_class_loss = client_.study_labelled();
  stats.teacher_checksum_before_unlabelled = checksum(cloud_.model());
  client_.study_unlabelled(stats);
  stats.teacher_checksum_after_unlabelled = checksum(cloud_.model());
  return stats;
}

nlohmann::json StepRecord::to_json() const {
  return {{"step", step},
          {"labelled_count", labelled_count},
          {"teacher_accuracy", teacher_accuracy},
          {"mean_score", mean_score},
          {"agree_size", agree},
          {"disagree_size", disagree},
          {"out_of_class_skipped", out_of_class_skipped},
          {"selected", selected}};
}

std::vector<std::vector<DatumId>> RunReport::selections() const {
  std::vector<std::vector<DatumId>> out;
  for (const auto& s : steps) {
    if (s.step > 0) out.push_back(s.selected);
  }
  return out;
}

RunReport run_acquisition_loop(const RunConfig& cfg, const Dataset& train, const Dataset& test,
                               Oracle& oracle, const StepObserver& on_step) {
  cfg.validate();
  train.validate();
  RunReport report;
  Session session(cfg, train, test, oracle);
  Channel& channel = session.channel();
  Client& client = session.client();
  Cloud& cloud = session.cloud();

  auto train_and_record = [&](StepRecord& rec) {
    for (std::size_t e = 0; e < cfg.epochs_per_step; ++e) {
      const EpochStats stats = session.run_epoch();
      if (stats.teacher_checksum_before_unlabelled != stats.teacher_checksum_after_unlabelled) {
        report.teacher_isolated = false;
      }
      if (stats.out_of_class_skipped && cfg.out_of_class) ++rec.out_of_class_skipped;
      rec.agree = stats.agree;
      rec.disagree = stats.disagree;
    }
    rec.labelled_count = client.pool().labelled_ids().size();
    rec.teacher_accuracy = cloud.evaluate();
    Message metrics;
    metrics.direction = Direction::CloudToClient;
    metrics.kind = MessageKind::TaskModelMetrics;
    metrics.accuracy = rec.teacher_accuracy;
    channel.record(metrics);
    report.steps.push_back(rec);
    if (on_step) on_step(rec);
  };

  channel.set_step(0);
  session.initialize();
  StepRecord initial;
  train_and_record(initial);

  for (std::size_t step = 1; client.pool().labelled_ids().size() < cfg.n_final; ++step) {
    channel.set_step(step);
    const std::size_t need = std::min(cfg.budget, cfg.n_final - client.pool().labelled_ids().size());
    StepRecord rec;
    rec.step = step;
    const Selection sel = client.propose(need, &rec.mean_score);
    if (sel.ids.empty()) {
      report.exhausted = true;
      report.warnings.push_back("safe pool exhausted before reaching n_final");
      break;
    }
    client.annotate(sel.ids);
    rec.selected = sel.ids;
    if (cfg.retrain == Retrain::FromScratch) {
      cloud.reinitialize();
      client.reinitialize_peers();
    }
    train_and_record(rec);
    if (sel.truncated) {
      report.exhausted = true;
      report.warnings.push_back("safe pool exhausted at step " + std::to_string(step) +
                                "; labelled all remaining safe data");
      break;
    }
  }
  report.audit = session.audit();
  report.audit.seal();
  report.protected_ids = client.pool().protected_ids();
  report.final_peers = client.peers();
  report.final_teacher = cloud.model();
  return report;
}

// ---------------------------------------------------------------------------
// Analysis and report files

double accuracy(const MlpModel& model, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  const Tensor logits = forward(model, ds.features);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (static_cast<int>(argmax(logits.row(r))) == ds.labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double ConsensusBin::consensus_accuracy() const {
  return consensus ? static_cast<double>(consensus_correct) / static_cast<double>(consensus) : 0.0;
}

double ConsensusBin::split_accuracy() const {
  return split ? static_cast<double>(split_correct) / static_cast<double>(split) : 0.0;
}

std::size_t ConsensusReport::consensus_dominant_bins() const {
  std::size_t n = 0;
  for (const auto& b : bins) {
    if (b.consensus == 0 || b.split == 0 || b.consensus_accuracy() >= b.split_accuracy()) ++n;
  }
  return n;
}

ConsensusReport consensus_accuracy_report(const std::vector<MlpModel>& peers, const MlpModel& teacher,
                                          const Dataset& eval, std::size_t bins) {
  if (peers.size() < 2) throw DomainError("consensus report: needs at least two peers");
  if (bins == 0) throw DomainError("consensus report: bins must be positive");
  std::vector<DatumId> ids(eval.size());
  std::iota(ids.begin(), ids.end(), DatumId{0});
  ConsensusReport report;
  if (ids.empty()) return report;

  auto scores = sampling_scores(peers, eval.features, ids);
  std::vector<Tensor> logits;
  for (const auto& p : peers) logits.push_back(forward(p, eval.features));
  const Tensor teacher_logits = forward(teacher, eval.features);
  const ConsensusPartition part = partition_consensus(logits, ids);
  std::vector<bool> agrees(eval.size(), false);
  for (DatumId id : part.agree_ids) agrees[id] = true;

  std::sort(scores.begin(), scores.end(), [](const SamplingScore& a, const SamplingScore& b) {
    return a.score < b.score || (a.score == b.score && a.id < b.id);
  });
  if (scores.front().score == scores.back().score) bins = 1;
  bins = std::min(bins, scores.size());

  const std::size_t n = scores.size();
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t begin = b * n / bins;
    const std::size_t end = (b + 1) * n / bins;
    ConsensusBin bin;
    bin.lo = scores[begin].score;
    bin.hi = scores[end - 1].score;
    bin.size = end - begin;
    for (std::size_t i = begin; i < end; ++i) {
      const DatumId id = scores[i].id;
      const bool peer_ok = static_cast<int>(argmax(logits[0].row(id))) == eval.labels[id];
      const bool teacher_ok = static_cast<int>(argmax(teacher_logits.row(id))) == eval.labels[id];
      if (agrees[id]) {
        ++bin.consensus;
        bin.consensus_correct += peer_ok;
        bin.consensus_teacher_correct += teacher_ok;
      } else {
        ++bin.split;
        bin.split_correct += peer_ok;
        bin.split_teacher_correct += teacher_ok;
      }
    }
    report.bins.push_back(bin);
  }
  return report;
}

ReportPaths ReportPaths::in(const std::filesystem::path& dir) {
  return {dir / "metrics.jsonl", dir / "curve.csv", dir / "audit.jsonl"};
}

void write_curve_csv(const std::vector<StepRecord>& steps, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StateError("cannot write " + path.string());
  out << "step,labelled_count,accuracy\n";
  for (const auto& s : steps) {
    out << s.step << ',' << s.labelled_count << ',' << format_double(s.teacher_accuracy) << '\n';
  }
}

void write_run_report(const RunReport& report, const ReportPaths& paths) {
  for (const auto* p : {&paths.metrics, &paths.curve, &paths.audit}) {
    if (p->has_parent_path()) std::filesystem::create_directories(p->parent_path());
  }
  std::ofstream metrics(paths.metrics);
  if (!metrics) throw StateError("cannot write " + paths.metrics.string());
  for (const auto& s : report.steps) metrics << s.to_json().dump() << '\n';
  write_curve_csv(report.steps, paths.curve);
  report.audit.write_jsonl(paths.audit);
}

std::vector<StepRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<StepRecord> steps;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      StepRecord s;
      s.step = j.at("step").get<std::size_t>();
      s.labelled_count = j.at("labelled_count").get<std::size_t>();
      s.teacher_accuracy = j.at("teacher_accuracy").get<double>();
      s.mean_score = j.value("mean_score", 0.0);
      s.agree = j.value("agree_size", std::size_t{0});
      s.disagree = j.value("disagree_size", std::size_t{0});
      s.out_of_class_skipped = j.value("out_of_class_skipped", std::size_t{0});
      s.selected = j.value("selected", std::vector<DatumId>{});
      steps.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("metrics: ") + e.what(), line_no);
    }
  }
  return steps;
}

}  // namespace psl
