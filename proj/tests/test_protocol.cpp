// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "psl/errors.hpp"
#include "psl/functional.hpp"
#include "psl/protocol.hpp"

using namespace psl;
namespace fs = std::filesystem;

namespace {

struct Blobs {
  Dataset train, test;
  explicit Blobs(std::uint64_t seed, std::size_t n_train = 400, std::size_t n_test = 100) {
    auto [a, b] = split_train_test(make_blobs(n_train + n_test, 4, 2, 0.4, seed), n_train);
    train = std::move(a);
    test = std::move(b);
  }
};

RunConfig small_config(std::uint64_t seed) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.n_labelled = 10;
  cfg.budget = 10;
  cfg.n_final = 40;
  cfg.epochs_per_step = 3;
  cfg.teacher_hidden = {16};
  cfg.unlabelled_batch = 64;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "psl_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("run config validation") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.budget = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = {};
  cfg.n_labelled = 200;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = {};
  cfg.protected_fraction = 1.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  CHECK(parse_strategy("entropy") == Strategy::Entropy);
  CHECK(to_string(parse_retrain("from_scratch")) == "from_scratch");
  CHECK_THROWS_AS(parse_strategy("coreset"), DomainError);
}

TEST_CASE("minibatch_order covers every index once") {
  std::mt19937_64 rng(3);
  auto batches = minibatch_order(70, 32, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[2].size() == 6);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 70);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}

TEST_CASE("cloud refuses data it never received") {
  Blobs data(1);
  GroundTruthOracle oracle;
  Cloud cloud({2, 8, 4}, SgdConfig{}, 1, &oracle, &data.train, &data.test);
  Message req;
  req.kind = MessageKind::TeacherLogitsRequest;
  req.payload_ids = {5};
  CHECK_THROWS_AS(cloud.handle(req), StateError);

  Message ann;
  ann.kind = MessageKind::AnnotationRequest;
  ann.payload_ids = {5, 9};
  ann.features = data.train.features.gather_rows(ann.payload_ids);
  Message reply = cloud.handle(ann);
  CHECK(reply.labels == std::vector<int>{data.train.labels[5], data.train.labels[9]});
  CHECK(cloud.knows(5));
  CHECK_FALSE(cloud.knows(6));
  CHECK_THROWS_AS(cloud.handle(ann), StateError);  // already labelled

  reply = cloud.handle(req);
  CHECK(reply.kind == MessageKind::TeacherLogitsResponse);
  CHECK(reply.logits == forward(cloud.model(), data.train.features.gather_rows(req.payload_ids)));
}

TEST_CASE("session: teacher untouched by the unlabelled phase, requests stay inside D_L") {
  Blobs data(2);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(2);
  Session session(cfg, data.train, data.test, oracle);
  session.initialize();
  const auto& pool = session.client().pool();
  CHECK(pool.labelled_ids().size() == 10);
  CHECK(session.cloud().labelled_count() == 10);

  std::size_t ran = 0;
  for (int e = 0; e < 5; ++e) {
    const EpochStats stats = session.run_epoch();
    CHECK(stats.teacher_checksum_before_unlabelled == stats.teacher_checksum_after_unlabelled);
    CHECK(stats.agree + stats.disagree == 64);
    ran += !stats.out_of_class_skipped;
  }
  CHECK(ran > 0);

  const std::set<DatumId> labelled(pool.labelled_ids().begin(), pool.labelled_ids().end());
  for (const auto& e : session.audit().entries()) {
    if (e.kind == MessageKind::TeacherLogitsRequest) {
      for (DatumId id : e.ids) CHECK(labelled.count(id) == 1);
    }
    if (e.direction == Direction::ClientToCloud) {
      for (DatumId id : e.ids) CHECK_FALSE(pool.is_protected(id));
    }
  }
}

TEST_CASE("client refuses to upload protected data and sends nothing") {
  Blobs data(3);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(3);
  Session session(cfg, data.train, data.test, oracle);
  session.initialize();
  const std::size_t before = session.audit().entries().size();
  const DatumId guarded = session.client().pool().protected_ids().front();
  CHECK_THROWS_AS(session.client().annotate(std::vector<DatumId>{guarded}), IsolationViolation);
  CHECK(session.audit().entries().size() == before);
  CHECK_FALSE(session.cloud().knows(guarded));
}

TEST_CASE("no ranking step with alpha=0 equals plain supervised peers") {
  Blobs data(4);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(4);
  cfg.hyper.alpha = 0.0;
  cfg.hyper.xi = 0.0;
  cfg.out_of_class = false;
  Session session(cfg, data.train, data.test, oracle);
  session.initialize();

  // Oracle: the same minibatches and the same SGD on the plain task loss.
  const auto& pool = session.client().pool();
  std::vector<MlpModel> expected = session.client().peers();
  std::vector<SgdState> states(expected.size());
  std::mt19937_64 rng(derive_seed(cfg.seed, 3));
  for (int e = 0; e < 3; ++e) {
    session.run_epoch();
    for (const auto& batch : minibatch_order(pool.labelled_ids().size(), cfg.sgd.batch_size, rng)) {
      std::vector<DatumId> ids;
      std::vector<int> y;
      for (std::size_t i : batch) {
        ids.push_back(pool.labelled_ids()[i]);
        y.push_back(pool.labelled_labels()[i]);
      }
      const Tensor x = data.train.features.gather_rows(ids);
      for (std::size_t j = 0; j < expected.size(); ++j) {
        ForwardCache cache;
        const Tensor logits = forward(expected[j], x, cache);
        sgd_step(expected[j], backward(expected[j], cache, task_loss(logits, y).logit_grad), cfg.sgd, states[j]);
      }
    }
  }
  for (std::size_t j = 0; j < expected.size(); ++j) {
    CHECK(expected[j].params() == session.client().peers()[j].params());
  }
}

TEST_CASE("identical peers: zero discrepancy, ranking step skipped") {
  Blobs data(5);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(5);
  cfg.shared_peer_init = true;
  Session session(cfg, data.train, data.test, oracle);
  session.initialize();
  const EpochStats stats = session.run_epoch();
  CHECK(stats.out_of_class_skipped);
  CHECK(stats.disagree == 0);
  const auto& peers = session.client().peers();
  CHECK(peers[0].params() == peers[1].params());
  const auto& safe = session.client().pool().safe_ids();
  for (const auto& s : sampling_scores(peers, data.train.features.gather_rows(safe), safe)) {
    CHECK(s.score == 0.0);
  }
}

TEST_CASE("acquisition loop: steps, growth, isolation and audit") {
  Blobs data(6);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(6);
  RunReport report = run_acquisition_loop(cfg, data.train, data.test, oracle);
  REQUIRE(report.steps.size() == 4);  // initial + 3 acquisitions
  for (std::size_t s = 0; s < report.steps.size(); ++s) {
    CHECK(report.steps[s].step == s);
    CHECK(report.steps[s].labelled_count == 10 + 10 * s);
    CHECK(report.steps[s].teacher_accuracy >= 0.0);
    CHECK(report.steps[s].teacher_accuracy <= 1.0);
  }
  CHECK_FALSE(report.exhausted);
  CHECK(report.teacher_isolated);
  CHECK(report.audit.sealed());
  CHECK_THROWS_AS(report.audit.append(AuditEntry{}), StateError);
  CHECK(report.protected_ids.size() == 360);
  CHECK(audit_verify(report.audit, report.protected_ids).pass);

  std::set<DatumId> picked;
  for (const auto& sel : report.selections()) {
    CHECK(sel.size() == 10);
    for (DatumId id : sel) CHECK(picked.insert(id).second);
  }
  std::size_t metrics = 0;
  for (const auto& e : report.audit.entries()) metrics += e.kind == MessageKind::TaskModelMetrics;
  CHECK(metrics == report.steps.size());
}

TEST_CASE("acquisition loop: budget larger than the safe pool labels everything safe once") {
  Blobs data(7, 200, 50);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(7);
  cfg.n_labelled = 5;
  cfg.budget = 50;
  cfg.n_final = 150;
  RunReport report = run_acquisition_loop(cfg, data.train, data.test, oracle);
  REQUIRE(report.steps.size() == 2);
  CHECK(report.exhausted);
  CHECK_FALSE(report.warnings.empty());
  CHECK(report.steps.back().labelled_count == 20);  // 200 - 180 protected
  CHECK(audit_verify(report.audit, report.protected_ids).pass);
}

TEST_CASE("acquisition loop: last step only tops up to n_final") {
  Blobs data(8);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(8);
  cfg.budget = 12;
  RunReport report = run_acquisition_loop(cfg, data.train, data.test, oracle);
  std::vector<std::size_t> counts;
  for (const auto& s : report.steps) counts.push_back(s.labelled_count);
  CHECK(counts == std::vector<std::size_t>{10, 22, 34, 40});
}

TEST_CASE("strategies are dispatched and deterministic") {
  Blobs data(9);
  GroundTruthOracle oracle;
  for (Strategy s : {Strategy::Psl, Strategy::Entropy, Strategy::Random}) {
    RunConfig cfg = small_config(9);
    cfg.strategy = s;
    const RunReport a = run_acquisition_loop(cfg, data.train, data.test, oracle);
    const RunReport b = run_acquisition_loop(cfg, data.train, data.test, oracle);
    CHECK(a.selections() == b.selections());
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
      CHECK(a.steps[i].teacher_accuracy == b.steps[i].teacher_accuracy);
    }
  }
  RunConfig p = small_config(9), r = small_config(9);
  r.strategy = Strategy::Random;
  CHECK(run_acquisition_loop(p, data.train, data.test, oracle).selections() !=
        run_acquisition_loop(r, data.train, data.test, oracle).selections());
}

TEST_CASE("psl proposal is the top-b of the sampling scores") {
  Blobs data(10);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(10);
  Session session(cfg, data.train, data.test, oracle);
  session.initialize();
  session.run_epoch();
  const auto& safe = session.client().pool().safe_ids();
  auto scores = sampling_scores(session.client().peers(), data.train.features.gather_rows(safe), safe);
  std::sort(scores.begin(), scores.end(), [](const SamplingScore& a, const SamplingScore& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  double mean = -1;
  const Selection sel = session.client().propose(7, &mean);
  REQUIRE(sel.ids.size() == 7);
  for (std::size_t i = 0; i < 7; ++i) CHECK(sel.ids[i] == scores[i].id);
  CHECK(mean > 0.0);
}

TEST_CASE("from_scratch retraining resets models before each step") {
  Blobs data(11);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(11);
  cfg.retrain = Retrain::FromScratch;
  const RunReport report = run_acquisition_loop(cfg, data.train, data.test, oracle);
  CHECK(report.steps.size() == 4);
  CHECK(audit_verify(report.audit, report.protected_ids).pass);

  Cloud cloud({2, 8, 4}, SgdConfig{}, 3, &oracle, &data.train, &data.test);
  const auto initial = checksum(cloud.model());
  Message ann;
  ann.kind = MessageKind::AnnotationRequest;
  ann.payload_ids = {1, 2, 3};
  ann.features = data.train.features.gather_rows(ann.payload_ids);
  cloud.handle(ann);
  cloud.train_epoch();
  CHECK(checksum(cloud.model()) != initial);
  cloud.reinitialize();
  CHECK(checksum(cloud.model()) == initial);
}

TEST_CASE("audit_verify names the first offending message") {
  Blobs data(12);
  GroundTruthOracle oracle;
  RunReport report = run_acquisition_loop(small_config(12), data.train, data.test, oracle);
  AuditLog forged;
  for (const auto& e : report.audit.entries()) forged.append(e);
  AuditEntry bad;
  bad.step = 2;
  bad.direction = Direction::ClientToCloud;
  bad.kind = MessageKind::AnnotationRequest;
  bad.ids = {report.protected_ids[3]};
  bad.feature_rows = 1;
  forged.append(bad);
  const std::size_t bad_seq = forged.entries().size() - 1;
  forged.append(bad);

  const AuditVerdict v = audit_verify(forged, report.protected_ids);
  CHECK_FALSE(v.pass);
  REQUIRE(v.first_violation.has_value());
  CHECK(v.first_violation->seq == bad_seq);
  CHECK(v.offending_id == report.protected_ids[3]);
  CHECK(v.message.find("#" + std::to_string(bad_seq)) != std::string::npos);
  CHECK(v.message.find("AnnotationRequest") != std::string::npos);

  // Cloud-to-client mentions of protected ids are not uploads.
  AuditLog reply_only;
  bad.direction = Direction::CloudToClient;
  reply_only.append(bad);
  CHECK(audit_verify(reply_only, report.protected_ids).pass);
}

TEST_CASE("report files: curve rows, metrics round trip, audit lines") {
  Blobs data(13);
  GroundTruthOracle oracle;
  const RunReport report = run_acquisition_loop(small_config(13), data.train, data.test, oracle);
  const fs::path dir = temp_dir("report");
  const ReportPaths paths = ReportPaths::in(dir);
  write_run_report(report, paths);

  std::ifstream curve(paths.curve);
  std::string line;
  std::getline(curve, line);
  CHECK(line == "step,labelled_count,accuracy");
  std::size_t rows = 0;
  while (std::getline(curve, line)) ++rows;
  CHECK(rows == report.steps.size());

  const auto back = read_metrics_jsonl(paths.metrics);
  REQUIRE(back.size() == report.steps.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].teacher_accuracy == report.steps[i].teacher_accuracy);
    CHECK(back[i].selected == report.steps[i].selected);
    CHECK(back[i].labelled_count == report.steps[i].labelled_count);
  }

  std::ifstream audit(paths.audit);
  std::size_t lines = 0;
  while (std::getline(audit, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("seq").get<std::size_t>() == lines);
    ++lines;
  }
  CHECK(lines == report.audit.entries().size());

  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << "{\"step\": 0}\n";
  }
  CHECK_THROWS_AS(read_metrics_jsonl(dir / "bad.jsonl"), ParseError);
}

TEST_CASE("equal seeds give byte-identical curve files") {
  Blobs data(14);
  GroundTruthOracle oracle;
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
  write_run_report(run_acquisition_loop(small_config(14), data.train, data.test, oracle), ReportPaths::in(a));
  write_run_report(run_acquisition_loop(small_config(14), data.train, data.test, oracle), ReportPaths::in(b));
  CHECK(slurp(a / "curve.csv") == slurp(b / "curve.csv"));
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "audit.jsonl") == slurp(b / "audit.jsonl"));
}

TEST_CASE("consensus report: bins partition the data, degenerate committee gives one bin") {
  Blobs data(15);
  GroundTruthOracle oracle;
  RunConfig cfg = small_config(15);
  Session session(cfg, data.train, data.test, oracle);
  session.initialize();
  for (int e = 0; e < 5; ++e) session.run_epoch();
  const auto report = consensus_accuracy_report(session.client().peers(), session.cloud().model(), data.test, 5);
  REQUIRE(report.bins.size() == 5);
  std::size_t total = 0;
  for (std::size_t b = 0; b < report.bins.size(); ++b) {
    const auto& bin = report.bins[b];
    CHECK(bin.consensus + bin.split == bin.size);
    CHECK(bin.lo <= bin.hi);
    if (b > 0) CHECK(report.bins[b - 1].hi <= bin.lo);
    total += bin.size;
  }
  CHECK(total == data.test.size());

  std::vector<MlpModel> twins{session.client().peers()[0], session.client().peers()[0]};
  const auto flat = consensus_accuracy_report(twins, session.cloud().model(), data.test, 5);
  REQUIRE(flat.bins.size() == 1);
  CHECK(flat.bins[0].consensus == data.test.size());
  CHECK(flat.consensus_dominant_bins() == 1);
  CHECK_THROWS_AS(consensus_accuracy_report({twins[0]}, session.cloud().model(), data.test), DomainError);
}

TEST_CASE("accuracy counts argmax hits") {
  MlpModel m = MlpModel::create({2, 3}, 1);
  Dataset ds;
  ds.classes = 3;
  ds.features = Tensor({4, 2}, {1, 0, 0, 1, -1, 0, 0, -1});
  const Tensor logits = forward(m, ds.features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < 4; ++r) {
    ds.labels.push_back(r % 2 ? static_cast<int>(argmax(logits.row(r))) : static_cast<int>((argmax(logits.row(r)) + 1) % 3));
    hits += r % 2;
  }
  CHECK(accuracy(m, ds) == doctest::Approx(hits / 4.0));
}
