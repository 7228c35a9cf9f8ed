// SPDX-License-Identifier: Apache-2.0
#include "psl/cli.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "CLI11.hpp"
#include "psl/errors.hpp"
#include "psl/gradcheck.hpp"
#include "psl/serve.hpp"

namespace psl {

using nlohmann::json;

namespace {

constexpr std::uint64_t kOracleTag = 5;
constexpr std::uint64_t kClientOracleTag = 400;

void merge_into(json& base, const json& doc, const std::string& prefix) {
  if (!doc.is_object()) throw ConfigError((prefix.empty() ? "config" : prefix) + ": expected an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_into(slot, value, path);
    } else {
      slot = value;
    }
  }
}

const json& at(const json& doc, const std::string& section, const std::string& key) {
  return doc.at(section).at(key);
}

std::string str(const json& doc, const std::string& section, const std::string& key) {
  const json& v = at(doc, section, key);
  if (!v.is_string()) throw ConfigError(section + "." + key + ": expected a string");
  return v.get<std::string>();
}

double num(const json& doc, const std::string& section, const std::string& key) {
  const json& v = at(doc, section, key);
  if (!v.is_number()) throw ConfigError(section + "." + key + ": expected a number");
  return v.get<double>();
}

std::size_t count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ConfigError(path + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::size_t count(const json& doc, const std::string& section, const std::string& key) {
  return count(at(doc, section, key), section + "." + key);
}

bool flag(const json& doc, const std::string& section, const std::string& key) {
  const json& v = at(doc, section, key);
  if (!v.is_boolean()) throw ConfigError(section + "." + key + ": expected true or false");
  return v.get<bool>();
}

std::vector<std::size_t> widths(const json& doc, const std::string& section, const std::string& key) {
  const json& v = at(doc, section, key);
  if (!v.is_array()) throw ConfigError(section + "." + key + ": expected an array of layer widths");
  std::vector<std::size_t> out;
  for (const auto& w : v) {
    const std::size_t n = count(w, section + "." + key);
    if (n == 0) throw ConfigError(section + "." + key + ": widths must be positive");
    out.push_back(n);
  }
  return out;
}

template <typename Fn>
auto checked(const std::string& what, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DomainError& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_json(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StateError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

int cmd_run(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.oracle.kind == "interactive") {
    err << "error: the interactive oracle is only available through 'psl serve'\n";
    return 2;
  }
  auto [train, test] = load_datasets(cfg.dataset, cfg.run.seed);
  auto oracle = make_simulated_oracle(cfg.oracle, cfg.run.seed);
  const RunReport report = run_acquisition_loop(cfg.run, train, test, *oracle, [&](const StepRecord& s) {
    out << "step " << s.step << ": labelled " << s.labelled_count << ", accuracy "
        << fixed(s.teacher_accuracy) << '\n';
  });
  std::filesystem::create_directories(cfg.out_dir);
  write_run_report(report, ReportPaths::in(cfg.out_dir));
  write_json(to_json(cfg), cfg.out_dir / "config.json");
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  const AuditVerdict verdict = audit_verify(report.audit, report.protected_ids);
  out << "audit: " << verdict.message << '\n';
  out << "final accuracy " << fixed(report.final_accuracy()) << " with "
      << (report.steps.empty() ? 0 : report.steps.back().labelled_count) << " labels; reports in "
      << cfg.out_dir.string() << '\n';
  return verdict.pass && report.teacher_isolated ? 0 : 3;
}

int cmd_federated(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.oracle.kind == "interactive") {
    err << "error: the federated command needs a simulated oracle\n";
    return 2;
  }
  auto [train, test] = load_datasets(cfg.dataset, cfg.run.seed);
  const FedReport report = run_federated(cfg.federated(), train, test, [&](std::size_t k) {
    return make_simulated_oracle(cfg.oracle, derive_seed(cfg.run.seed, kClientOracleTag + k));
  });
  write_fed_report(report, cfg.out_dir);
  write_json(to_json(cfg), cfg.out_dir / "config.json");
  for (const auto& r : report.rounds) {
    out << "round " << r.step << ": labelled " << r.labelled_count << ", server accuracy "
        << fixed(r.teacher_accuracy) << '\n';
  }
  bool pass = report.teacher_isolated;
  for (std::size_t k = 0; k < report.client_audits.size(); ++k) {
    const AuditVerdict v = audit_verify(report.client_audits[k], report.client_protected[k]);
    out << "client " << k << " audit: " << v.message << '\n';
    pass = pass && v.pass;
  }
  return pass ? 0 : 3;
}

int cmd_gradcheck(bool inject_fault, double tolerance, std::ostream& out) {
  GradCheckSuiteOptions opts;
  opts.corrupt_gradient = inject_fault;
  opts.tolerance = tolerance;
  bool ok = true;
  for (const auto& c : run_gradcheck_suite(opts)) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << c.report.max_rel_error;
    out << std::left << std::setw(40) << c.name << " max_rel_error " << err.str() << "  "
        << c.report.checked << " params  " << (c.report.passed ? "PASS" : "FAIL") << '\n';
    ok = ok && c.report.passed;
  }
  out << (ok ? "grad-check: all passed" : "grad-check: FAILED") << '\n';
  return ok ? 0 : 1;
}

int cmd_report(const std::filesystem::path& metrics, const std::filesystem::path& curve, std::ostream& out) {
  const auto steps = read_metrics_jsonl(metrics);
  write_curve_csv(steps, curve);
  out << "wrote " << steps.size() << " rows to " << curve.string() << '\n';
  return 0;
}

int cmd_serve(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.oracle.kind != "interactive") {
    err << "error: 'psl serve' needs oracle.kind = \"interactive\"\n";
    return 2;
  }
  ServeApp app(cfg);
  const int port = app.start();
  out << "serving on http://" << cfg.serve.host << ':' << port << "/" << std::endl;
  const bool ok = app.wait_for_run();
  out << (ok ? "run finished; reports in " + cfg.out_dir.string() : "run failed: " + app.status().at("error").get<std::string>())
      << std::endl;
  if (cfg.serve.exit_when_done) {
    app.stop();
    return ok ? 0 : 1;
  }
  // Keep answering status and curve requests until the process is interrupted.
  for (;;) std::this_thread::sleep_for(std::chrono::hours(1));
}

}  // namespace

FedConfig ExperimentConfig::federated() const {
  FedConfig f;
  f.clients = clients;
  f.local_epochs = local_epochs;
  f.rounds = rounds;
  f.run = run;
  return f;
}

json default_config_json() {
  return {
      {"dataset",
       {{"kind", "blobs"},
        {"n_train", 2000},
        {"n_test", 500},
        {"classes", 4},
        {"dim", 2},
        {"spread", 0.4},
        {"noise", 0.1},
        {"seed", nullptr},
        {"train_path", ""},
        {"test_path", ""},
        {"train_images", ""},
        {"train_labels", ""},
        {"test_images", ""},
        {"test_labels", ""}}},
      {"oracle", {{"kind", "ground_truth"}, {"noise_rate", 0.0}}},
      {"run",
       {{"strategy", "psl"},
        {"retrain", "continue"},
        {"seed", 1},
        {"n_labelled", 20},
        {"budget", 20},
        {"n_final", 120},
        {"epochs_per_step", 30},
        {"protected_fraction", 0.9},
        {"unlabelled_batch", 256},
        {"out_of_class", true},
        {"shared_peer_init", false},
        {"teacher_hidden", {64, 64}},
        {"peer_hidden", {16}}}},
      {"hyper",
       {{"alpha", 0.1}, {"temperature", 4.0}, {"xi", 0.01}, {"peers", 2}, {"out_of_class_variant", "intended"}}},
      {"sgd", {{"learning_rate", 0.05}, {"momentum", 0.9}, {"weight_decay", 5e-4}, {"batch_size", 32}}},
      {"federated", {{"clients", 4}, {"local_epochs", 30}, {"rounds", 10}}},
      {"output", {{"dir", "out"}}},
      {"serve", {{"host", "127.0.0.1"}, {"port", 8080}, {"ui_dir", ""}, {"exit_when_done", false}}},
  };
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  const json defaults = default_config_json();
  const json* slot = &defaults;
  std::string pointer;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!slot->is_object() || !slot->contains(part)) throw ConfigError("unknown config key '" + key + "'");
    slot = &slot->at(part);
    pointer += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (slot->is_object()) throw ConfigError("override '" + key + "' names a section, not a value");
  if (!doc.is_object()) doc = json::object();
  doc[json::json_pointer(pointer)] = std::move(value);
}

ExperimentConfig parse_experiment(const json& doc) {
  json d = default_config_json();
  merge_into(d, doc, "");
  ExperimentConfig cfg;
  try {
    auto& ds = cfg.dataset;
    ds.kind = str(d, "dataset", "kind");
    ds.n_train = count(d, "dataset", "n_train");
    ds.n_test = count(d, "dataset", "n_test");
    ds.classes = count(d, "dataset", "classes");
    ds.dim = count(d, "dataset", "dim");
    ds.spread = num(d, "dataset", "spread");
    ds.noise = num(d, "dataset", "noise");
    if (!at(d, "dataset", "seed").is_null()) ds.seed = count(d, "dataset", "seed");
    ds.train_path = str(d, "dataset", "train_path");
    ds.test_path = str(d, "dataset", "test_path");
    ds.train_images = str(d, "dataset", "train_images");
    ds.train_labels = str(d, "dataset", "train_labels");
    ds.test_images = str(d, "dataset", "test_images");
    ds.test_labels = str(d, "dataset", "test_labels");
    if (ds.kind != "blobs" && ds.kind != "moons" && ds.kind != "csv" && ds.kind != "idx") {
      throw ConfigError("dataset.kind: expected blobs, moons, csv or idx");
    }
    if ((ds.kind == "blobs" || ds.kind == "moons") && (ds.n_train == 0 || ds.n_test == 0)) {
      throw ConfigError("dataset: n_train and n_test must be positive");
    }
    if (ds.kind == "csv" && (ds.train_path.empty() || ds.test_path.empty())) {
      throw ConfigError("dataset: csv needs train_path and test_path");
    }
    if (ds.kind == "idx" && (ds.train_images.empty() || ds.train_labels.empty() || ds.test_images.empty() ||
                             ds.test_labels.empty())) {
      throw ConfigError("dataset: idx needs train_images, train_labels, test_images and test_labels");
    }

    cfg.oracle.kind = str(d, "oracle", "kind");
    cfg.oracle.noise_rate = num(d, "oracle", "noise_rate");
    if (cfg.oracle.kind != "ground_truth" && cfg.oracle.kind != "noisy" && cfg.oracle.kind != "interactive") {
      throw ConfigError("oracle.kind: expected ground_truth, noisy or interactive");
    }
    if (!(cfg.oracle.noise_rate >= 0.0 && cfg.oracle.noise_rate <= 1.0)) {
      throw ConfigError("oracle.noise_rate: expected a value in [0,1]");
    }

    RunConfig& run = cfg.run;
    run.strategy = checked("run.strategy", [&] { return parse_strategy(str(d, "run", "strategy")); });
    run.retrain = checked("run.retrain", [&] { return parse_retrain(str(d, "run", "retrain")); });
    run.seed = count(d, "run", "seed");
    run.n_labelled = count(d, "run", "n_labelled");
    run.budget = count(d, "run", "budget");
    run.n_final = count(d, "run", "n_final");
    run.epochs_per_step = count(d, "run", "epochs_per_step");
    run.protected_fraction = num(d, "run", "protected_fraction");
    run.unlabelled_batch = count(d, "run", "unlabelled_batch");
    run.out_of_class = flag(d, "run", "out_of_class");
    run.shared_peer_init = flag(d, "run", "shared_peer_init");
    run.teacher_hidden = widths(d, "run", "teacher_hidden");
    run.peer_hidden = widths(d, "run", "peer_hidden");
    run.hyper.alpha = num(d, "hyper", "alpha");
    run.hyper.tau = num(d, "hyper", "temperature");
    run.hyper.xi = num(d, "hyper", "xi");
    run.hyper.peers = count(d, "hyper", "peers");
    run.hyper.variant = checked("hyper.out_of_class_variant",
                                [&] { return parse_ranking_variant(str(d, "hyper", "out_of_class_variant")); });
    run.sgd.learning_rate = num(d, "sgd", "learning_rate");
    run.sgd.momentum = num(d, "sgd", "momentum");
    run.sgd.weight_decay = num(d, "sgd", "weight_decay");
    run.sgd.batch_size = count(d, "sgd", "batch_size");
    if (run.unlabelled_batch == 0) throw ConfigError("run.unlabelled_batch: must be positive");

    cfg.clients = count(d, "federated", "clients");
    cfg.local_epochs = count(d, "federated", "local_epochs");
    cfg.rounds = count(d, "federated", "rounds");
    cfg.out_dir = str(d, "output", "dir");

    cfg.serve.host = str(d, "serve", "host");
    const json& port = at(d, "serve", "port");
    if (!port.is_number_integer() || port.get<std::int64_t>() < 0 || port.get<std::int64_t>() > 65535) {
      throw ConfigError("serve.port: expected an integer in [0,65535]");
    }
    cfg.serve.port = port.get<int>();
    cfg.serve.ui_dir = str(d, "serve", "ui_dir");
    cfg.serve.exit_when_done = flag(d, "serve", "exit_when_done");

    checked("run", [&] { run.validate(); });
    checked("federated", [&] { cfg.federated().validate(); });
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json doc = json::parse(in, nullptr, false, true);
  if (doc.is_discarded()) throw ConfigError("config file '" + path.string() + "' is not valid JSON");
  for (const auto& o : overrides) apply_override(doc, o);
  return parse_experiment(doc);
}

json to_json(const ExperimentConfig& cfg) {
  const auto& ds = cfg.dataset;
  const auto& run = cfg.run;
  json seed = ds.seed ? json(*ds.seed) : json(nullptr);
  return {
      {"dataset",
       {{"kind", ds.kind},
        {"n_train", ds.n_train},
        {"n_test", ds.n_test},
        {"classes", ds.classes},
        {"dim", ds.dim},
        {"spread", ds.spread},
        {"noise", ds.noise},
        {"seed", seed},
        {"train_path", ds.train_path},
        {"test_path", ds.test_path},
        {"train_images", ds.train_images},
        {"train_labels", ds.train_labels},
        {"test_images", ds.test_images},
        {"test_labels", ds.test_labels}}},
      {"oracle", {{"kind", cfg.oracle.kind}, {"noise_rate", cfg.oracle.noise_rate}}},
      {"run",
       {{"strategy", to_string(run.strategy)},
        {"retrain", to_string(run.retrain)},
        {"seed", run.seed},
        {"n_labelled", run.n_labelled},
        {"budget", run.budget},
        {"n_final", run.n_final},
        {"epochs_per_step", run.epochs_per_step},
        {"protected_fraction", run.protected_fraction},
        {"unlabelled_batch", run.unlabelled_batch},
        {"out_of_class", run.out_of_class},
        {"shared_peer_init", run.shared_peer_init},
        {"teacher_hidden", run.teacher_hidden},
        {"peer_hidden", run.peer_hidden}}},
      {"hyper",
       {{"alpha", run.hyper.alpha},
        {"temperature", run.hyper.tau},
        {"xi", run.hyper.xi},
        {"peers", run.hyper.peers},
        {"out_of_class_variant", to_string(run.hyper.variant)}}},
      {"sgd",
       {{"learning_rate", run.sgd.learning_rate},
        {"momentum", run.sgd.momentum},
        {"weight_decay", run.sgd.weight_decay},
        {"batch_size", run.sgd.batch_size}}},
      {"federated", {{"clients", cfg.clients}, {"local_epochs", cfg.local_epochs}, {"rounds", cfg.rounds}}},
      {"output", {{"dir", cfg.out_dir.string()}}},
      {"serve",
       {{"host", cfg.serve.host},
        {"port", cfg.serve.port},
        {"ui_dir", cfg.serve.ui_dir},
        {"exit_when_done", cfg.serve.exit_when_done}}},
  };
}

std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec, std::uint64_t run_seed) {
  const std::uint64_t seed = spec.seed.value_or(run_seed);
  if (spec.kind == "blobs") {
    return split_train_test(make_blobs(spec.n_train + spec.n_test, spec.classes, spec.dim, spec.spread, seed),
                            spec.n_train);
  }
  if (spec.kind == "moons") {
    return split_train_test(make_moons(spec.n_train + spec.n_test, spec.noise, seed), spec.n_train);
  }
  if (spec.kind == "csv") return {load_csv(spec.train_path), load_csv(spec.test_path)};
  if (spec.kind == "idx") {
    return {load_idx(spec.train_images, spec.train_labels), load_idx(spec.test_images, spec.test_labels)};
  }
  throw ConfigError("dataset.kind: unknown kind '" + spec.kind + "'");
}

std::unique_ptr<Oracle> make_simulated_oracle(const OracleSpec& spec, std::uint64_t seed) {
  if (spec.kind == "ground_truth") return std::make_unique<GroundTruthOracle>();
  if (spec.kind == "noisy") return std::make_unique<NoisyOracle>(spec.noise_rate, derive_seed(seed, kOracleTag));
  throw ConfigError("oracle.kind '" + spec.kind + "' is not a simulated oracle");
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Peer study active learning at desk scale", "psl"};
  app.require_subcommand(1);

  std::string config_path, strategy, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  auto add_experiment_flags = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment JSON file")->required();
    sub->add_option("--strategy", strategy, "psl | entropy | random");
    sub->add_option("--seed", seed, "run seed");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--set", overrides, "override one key, e.g. --set run.budget=10");
  };
  CLI::App* run = app.add_subcommand("run", "single-client acquisition run");
  add_experiment_flags(run);
  CLI::App* fed = app.add_subcommand("federated", "multi-client run with federated averaging");
  add_experiment_flags(fed);
  CLI::App* serve = app.add_subcommand("serve", "run with a human oracle behind an HTTP API");
  add_experiment_flags(serve);

  CLI::App* grad = app.add_subcommand("grad-check", "finite-difference check of every loss gradient");
  bool inject_fault = false;
  double tolerance = 1e-4;
  grad->add_option("--tolerance", tolerance, "maximum relative error")->capture_default_str();
  grad->add_flag("--inject-fault", inject_fault)->group("");

  CLI::App* report = app.add_subcommand("report", "re-render curve.csv from metrics.jsonl");
  std::string metrics_path, curve_path;
  report->add_option("--metrics", metrics_path, "metrics.jsonl")->required();
  report->add_option("--curve", curve_path, "output curve.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  auto experiment = [&]() {
    std::vector<std::string> all = overrides;
    if (!strategy.empty()) all.push_back("run.strategy=\"" + strategy + "\"");
    if (seed) all.push_back("run.seed=" + std::to_string(*seed));
    if (!out_dir.empty()) all.push_back("output.dir=" + json(out_dir).dump());
    return load_experiment(config_path, all);
  };

  try {
    if (*grad) return cmd_gradcheck(inject_fault, tolerance, out);
    if (*report) return cmd_report(metrics_path, curve_path, out);
    const CLI::App* sub = app.get_subcommands().front();
    ExperimentConfig cfg;
    try {
      cfg = experiment();
    } catch (const ConfigError& e) {
      err << "error: " << e.what() << "\n\n" << sub->help();
      return 2;
    }
    if (*run) return cmd_run(cfg, out, err);
    if (*fed) return cmd_federated(cfg, out, err);
    if (*serve) return cmd_serve(cfg, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace psl
