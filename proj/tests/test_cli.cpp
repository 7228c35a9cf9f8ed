// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "psl/cli.hpp"
#include "psl/errors.hpp"
#include "psl/serve.hpp"

using namespace psl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "psl_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "psl");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path write_config(const fs::path& dir, const json& doc) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << doc.dump(2);
  return p;
}

json small_doc() {
  return {{"dataset", {{"n_train", 300}, {"n_test", 100}}},
          {"run",
           {{"n_labelled", 10}, {"budget", 5}, {"n_final", 20}, {"epochs_per_step", 4}, {"teacher_hidden", {16}}}}};
}

}  // namespace

TEST_CASE("config: defaults, overrides, unknown keys, types") {
  const ExperimentConfig d = parse_experiment(json::object());
  CHECK(d.run.n_labelled == 20);
  CHECK(d.run.budget == 20);
  CHECK(d.run.n_final == 120);
  CHECK(d.run.protected_fraction == 0.9);
  CHECK(d.run.hyper.alpha == 0.1);
  CHECK(d.run.hyper.tau == 4.0);
  CHECK(d.run.teacher_hidden == std::vector<std::size_t>{64, 64});
  CHECK(d.dataset.kind == "blobs");
  CHECK_FALSE(d.dataset.seed.has_value());

  json doc = {{"run", {{"budget", 7}}}};
  apply_override(doc, "run.seed=9");
  apply_override(doc, "run.strategy=entropy");
  apply_override(doc, "hyper.out_of_class_variant=literal");
  apply_override(doc, "run.peer_hidden=[8,8]");
  const ExperimentConfig c = parse_experiment(doc);
  CHECK(c.run.budget == 7);
  CHECK(c.run.seed == 9);
  CHECK(c.run.strategy == Strategy::Entropy);
  CHECK(c.run.hyper.variant == RankingVariant::Literal);
  CHECK(c.run.peer_hidden == std::vector<std::size_t>{8, 8});

  CHECK_THROWS_AS(parse_experiment(json{{"run", {{"bugdet", 3}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"extra", 1}}), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "run.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "run=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"run", {{"budget", -1}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"run", {{"budget", "ten"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"run", {{"budget", 0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"run", {{"strategy", "badge"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"hyper", {{"temperature", 0.0}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"oracle", {{"kind", "crowd"}}}}), ConfigError);
  CHECK_THROWS_AS(parse_experiment(json{{"dataset", {{"kind", "csv"}}}}), ConfigError);
}

TEST_CASE("config: to_json round trips") {
  json doc = small_doc();
  doc["run"]["strategy"] = "random";
  doc["dataset"]["seed"] = 3;
  const ExperimentConfig a = parse_experiment(doc);
  const ExperimentConfig b = parse_experiment(to_json(a));
  CHECK(to_json(a) == to_json(b));
  CHECK(b.dataset.seed == std::optional<std::uint64_t>{3});
  CHECK(to_json(parse_experiment(json::object())) == default_config_json());
}

TEST_CASE("bundled configs parse") {
  const fs::path dir = fs::path(PSL_SOURCE_DIR) / "configs";
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_experiment(entry.path()));
    ++n;
  }
  CHECK(n >= 5);
}

TEST_CASE("cli: usage errors") {
  auto r = cli({"run", "--config", "/nonexistent/config.json"});
  CHECK(r.code != 0);
  CHECK(r.err.find("Usage") != std::string::npos);
  r = cli({"run"});
  CHECK(r.code != 0);
  r = cli({});
  CHECK(r.code != 0);
  r = cli({"bogus"});
  CHECK(r.code != 0);

  const fs::path dir = temp_dir("cli_bad");
  const fs::path cfg = write_config(dir, {{"run", {{"unknown_key", 1}}}});
  r = cli({"run", "--config", cfg.string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("unknown_key") != std::string::npos);
}

TEST_CASE("cli: run twice with equal seeds gives byte-identical curve.csv") {
  const fs::path dir = temp_dir("cli_run");
  const fs::path cfg = write_config(dir, small_doc());
  const auto a = cli({"run", "-c", cfg.string(), "--strategy", "random", "--seed", "7", "--out", (dir / "a").string()});
  const auto b = cli({"run", "-c", cfg.string(), "--strategy", "random", "--seed", "7", "--out", (dir / "b").string()});
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a" / "curve.csv") == slurp(dir / "b" / "curve.csv"));
  CHECK(slurp(dir / "a" / "metrics.jsonl") == slurp(dir / "b" / "metrics.jsonl"));
  CHECK(a.out.find("PASS") != std::string::npos);
  // 10 -> 15 -> 20: two acquisitions plus the initial point.
  CHECK(read_metrics_jsonl(dir / "a" / "metrics.jsonl").size() == 3);
  const auto resolved = json::parse(slurp(dir / "a" / "config.json"));
  CHECK(resolved["run"]["strategy"] == "random");
  CHECK(resolved["run"]["seed"] == 7);

  // report re-renders the same curve
  const auto r = cli({"report", "--metrics", (dir / "a" / "metrics.jsonl").string(), "--curve",
                      (dir / "re.csv").string()});
  CHECK(r.code == 0);
  CHECK(slurp(dir / "re.csv") == slurp(dir / "a" / "curve.csv"));

  const auto c = cli({"run", "-c", cfg.string(), "--set", "run.seed=8", "--out", (dir / "c").string()});
  CHECK(c.code == 0);
  CHECK(json::parse(slurp(dir / "c" / "config.json"))["run"]["seed"] == 8);
}

TEST_CASE("cli: federated writes per-client audits") {
  const fs::path dir = temp_dir("cli_fed");
  json doc = small_doc();
  doc["run"]["n_labelled"] = 3;
  doc["run"]["budget"] = 3;
  doc["run"]["n_final"] = 9;
  doc["run"]["protected_fraction"] = 0.5;
  doc["federated"] = {{"clients", 2}, {"local_epochs", 2}, {"rounds", 3}};
  const fs::path cfg = write_config(dir, doc);
  const auto r = cli({"federated", "-c", cfg.string(), "--out", (dir / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "out" / "audit.client0.jsonl"));
  CHECK(fs::exists(dir / "out" / "audit.client1.jsonl"));
  CHECK(fs::exists(dir / "out" / "curve.csv"));
}

TEST_CASE("cli: grad-check passes, injected fault fails") {
  const auto ok = cli({"grad-check"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("in_class_loss") != std::string::npos);
  CHECK(ok.out.find("max_rel_error") != std::string::npos);
  const auto bad = cli({"grad-check", "--inject-fault"});
  CHECK(bad.code != 0);
  CHECK(bad.out.find("FAIL") != std::string::npos);
}

TEST_CASE("annotation queue: blocking ask, unknown and invalid labels") {
  Dataset ds = make_blobs(20, 4, 2, 0.4, 1);
  AnnotationQueue queue(4);
  std::vector<int> got;
  std::thread asker([&] { got = queue.ask(std::vector<DatumId>{3, 5}, ds); });
  while (queue.pending().size() < 2) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  const auto pending = queue.pending();
  CHECK(pending[0].features == std::vector<double>(ds.features.row(3).begin(), ds.features.row(3).end()));
  CHECK(queue.label(999, 1) == LabelResult::UnknownQuery);
  CHECK(queue.label(pending[0].query_id, 4) == LabelResult::InvalidLabel);
  CHECK(queue.label(pending[1].query_id, 2) == LabelResult::Accepted);
  CHECK(queue.label(pending[1].query_id, 2) == LabelResult::UnknownQuery);
  CHECK(queue.label(pending[0].query_id, 0) == LabelResult::Accepted);
  asker.join();
  CHECK(got == std::vector<int>{0, 2});
  CHECK(queue.delivered() == 2);

  std::thread waiting([&] { CHECK_THROWS_AS(queue.ask(std::vector<DatumId>{1}, ds), StateError); });
  while (queue.pending().empty()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  queue.close();
  waiting.join();
}

TEST_CASE("serve: ground-truth human session reproduces the simulated run") {
  json doc = small_doc();
  doc["oracle"] = {{"kind", "interactive"}};
  doc["serve"] = {{"port", 0}};
  const fs::path dir = temp_dir("serve");
  doc["output"] = {{"dir", (dir / "out").string()}};
  const ExperimentConfig cfg = parse_experiment(doc);
  auto [train, test] = load_datasets(cfg.dataset, cfg.run.seed);

  ServeApp app(cfg);
  const int port = app.start();
  httplib::Client http("127.0.0.1", port);
  http.set_read_timeout(5);

  auto label_of = [&](const json& features) {
    for (std::size_t r = 0; r < train.size(); ++r) {
      bool same = true;
      for (std::size_t c = 0; c < train.dim(); ++c) same = same && features[c].get<double>() == train.features(r, c);
      if (same) return train.labels[r];
    }
    return -1;
  };

  // Error paths first, on the first queued query.
  json first;
  for (int tries = 0; tries < 2000; ++tries) {
    auto res = http.Get("/api/queue");
    REQUIRE(res);
    first = json::parse(res->body)["queries"];
    if (!first.empty()) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  REQUIRE_FALSE(first.empty());
  CHECK(first[0]["class_names"].size() == 4);
  CHECK(first[0]["features"].size() == 2);
  const auto qid = first[0]["query_id"].get<std::uint64_t>();
  CHECK(http.Post("/api/label", json{{"query_id", 99999}, {"label", 0}}.dump(), "application/json")->status == 404);
  CHECK(http.Post("/api/label", json{{"query_id", qid}, {"label", 7}}.dump(), "application/json")->status == 422);
  CHECK(http.Post("/api/label", "not json", "application/json")->status == 400);

  auto status = json::parse(http.Get("/api/status")->body);
  CHECK(status["state"] == "running");
  CHECK(status["labelled_count"] == 0);
  CHECK(status.contains("curve"));

  std::size_t posted = 0;
  bool saw_growth = false;
  for (int tries = 0; tries < 20000 && json::parse(http.Get("/api/status")->body)["state"] == "running"; ++tries) {
    const json queue = json::parse(http.Get("/api/queue")->body)["queries"];
    for (const auto& q : queue) {
      const auto before = json::parse(http.Get("/api/status")->body)["labelled_count"].get<std::size_t>();
      auto res = http.Post("/api/label", json{{"query_id", q["query_id"]}, {"label", label_of(q["features"])}}.dump(),
                           "application/json");
      REQUIRE(res);
      CHECK(res->status == 200);
      const auto after = json::parse(http.Get("/api/status")->body)["labelled_count"].get<std::size_t>();
      saw_growth = saw_growth || after == before + 1;
      ++posted;
    }
    if (queue.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  REQUIRE(app.wait_for_run());
  CHECK(saw_growth);
  CHECK(posted == 20);

  const json curve = json::parse(http.Get("/api/curve")->body)["points"];
  CHECK(curve.size() == 3);
  app.stop();

  GroundTruthOracle truth;
  const RunReport simulated = run_acquisition_loop(cfg.run, train, test, truth);
  REQUIRE(app.report().has_value());
  CHECK(app.report()->selections() == simulated.selections());
  for (std::size_t i = 0; i < simulated.steps.size(); ++i) {
    CHECK(app.report()->steps[i].teacher_accuracy == simulated.steps[i].teacher_accuracy);
    CHECK(curve[i]["accuracy"].get<double>() == simulated.steps[i].teacher_accuracy);
  }

  // Same report schema as a simulated run.
  write_run_report(simulated, ReportPaths::in(dir / "sim"));
  std::ifstream served(dir / "out" / "metrics.jsonl"), sim(dir / "sim" / "metrics.jsonl");
  std::string a, b;
  while (std::getline(served, a) && std::getline(sim, b)) {
    std::vector<std::string> ka, kb;
    const json ja = json::parse(a), jb = json::parse(b);
    for (const auto& [k, v] : ja.items()) ka.push_back(k);
    for (const auto& [k, v] : jb.items()) kb.push_back(k);
    CHECK(ka == kb);
  }
  CHECK(slurp(dir / "out" / "curve.csv") == slurp(dir / "sim" / "curve.csv"));
}

TEST_CASE("serve: protected data never reaches the queue") {
  json doc = small_doc();
  doc["oracle"] = {{"kind", "interactive"}};
  doc["serve"] = {{"port", 0}};
  doc["output"] = {{"dir", (temp_dir("serve_iso") / "out").string()}};
  const ExperimentConfig cfg = parse_experiment(doc);
  auto [train, test] = load_datasets(cfg.dataset, cfg.run.seed);
  const PoolPlan plan = plan_pools(train.size(), cfg.run.n_labelled, cfg.run.protected_fraction,
                                   derive_seed(cfg.run.seed, 1));
  ServeApp app(cfg);
  app.start();
  std::set<std::vector<double>> protected_rows;
  for (DatumId id : plan.pool.protected_ids()) {
    protected_rows.insert(std::vector<double>(train.features.row(id).begin(), train.features.row(id).end()));
  }
  auto& queue = app.annotation_queue();
  for (int tries = 0; tries < 20000 && app.status()["state"] == "running"; ++tries) {
    for (const auto& q : queue.pending()) {
      CHECK(protected_rows.count(q.features) == 0);
      CHECK_FALSE(plan.pool.is_protected(q.datum));
      queue.label(q.query_id, train.labels[q.datum]);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
  CHECK(app.wait_for_run());
  app.stop();
}

TEST_CASE("serve: static UI and stop while waiting") {
  const fs::path ui = temp_dir("serve_ui");
  std::ofstream(ui / "index.html") << "<html>ok</html>";
  json doc = small_doc();
  doc["oracle"] = {{"kind", "interactive"}};
  doc["serve"] = {{"port", 0}, {"ui_dir", ui.string()}};
  doc["output"] = {{"dir", (ui / "out").string()}};
  ServeApp app(parse_experiment(doc));
  const int port = app.start();
  httplib::Client http("127.0.0.1", port);
  auto res = http.Get("/index.html");
  REQUIRE(res);
  CHECK(res->body == "<html>ok</html>");
  app.stop();
  CHECK_FALSE(app.wait_for_run());
  CHECK(app.status()["state"] == "failed");
}
