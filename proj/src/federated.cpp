// SPDX-License-Identifier: Apache-2.0
#include "psl/federated.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>

#include "psl/errors.hpp"

namespace psl {

namespace {

constexpr std::uint64_t kSplitTag = 200;
constexpr std::uint64_t kServerTag = 201;
constexpr std::uint64_t kClientSeedTag = 300;

struct ClientNode {
  RunConfig cfg;
  Dataset data;
  std::unique_ptr<Oracle> oracle;
  std::unique_ptr<Session> session;
  bool isolated = true;
  std::vector<DatumId> last_selection;
};

}  // namespace

std::vector<Dataset> split_clients(const Dataset& ds, std::size_t clients, std::uint64_t seed) {
  if (clients == 0) throw DomainError("split_clients: need at least one client");
  if (clients > ds.size()) throw DomainError("split_clients: more clients than data");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, kSplitTag));
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Dataset> shards;
  for (std::size_t k = 0; k < clients; ++k) {
    const std::size_t begin = k * ds.size() / clients;
    const std::size_t end = (k + 1) * ds.size() / clients;
    std::vector<DatumId> ids(order.begin() + static_cast<std::ptrdiff_t>(begin),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    std::sort(ids.begin(), ids.end());
    shards.push_back(ds.subset(ids));
  }
  return shards;
}

ParamSet fed_avg(const std::vector<ParamSet>& params, std::span<const double> weights) {
  if (params.empty()) throw DomainError("fed_avg: nothing to average");
  if (!weights.empty() && weights.size() != params.size()) {
    throw ShapeError("fed_avg: one weight per parameter set");
  }
  for (const auto& p : params) {
    if (!p.same_layout(params.front()) || p.size() != params.front().size()) {
      throw ShapeError("fed_avg: parameter layouts differ");
    }
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("fed_avg: weights must be non-negative");
    total += w;
  }
  if (!weights.empty() && total <= 0.0) throw DomainError("fed_avg: weights sum to zero");

  // Running mean: identical inputs average to themselves exactly.
  ParamSet out = params.front();
  auto dst = out.flat().data();
  double seen = weights.empty() ? 1.0 : weights[0];
  for (std::size_t k = 1; k < params.size(); ++k) {
    const double w = weights.empty() ? 1.0 : weights[k];
    if (w == 0.0) continue;
    seen += w;
    const double share = w / seen;
    const auto src = params[k].flat().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += share * (src[i] - dst[i]);
  }
  return out;
}

void FedConfig::validate() const {
  if (clients == 0) throw DomainError("federated: clients must be at least 1");
  if (rounds == 0) throw DomainError("federated: rounds must be at least 1");
  if (local_epochs == 0) throw DomainError("federated: local_epochs must be positive");
  run.validate();
}

FedReport run_federated(const FedConfig& cfg, const Dataset& train, const Dataset& test,
                        const OracleFactory& make_oracle) {
  cfg.validate();
  train.validate();
  const std::vector<std::size_t> widths = [&] {
    std::vector<std::size_t> w{train.dim()};
    w.insert(w.end(), cfg.run.peer_hidden.begin(), cfg.run.peer_hidden.end());
    w.push_back(train.classes);
    return w;
  }();
  MlpModel server = MlpModel::create(widths, derive_seed(cfg.run.seed, kServerTag));

  std::vector<Dataset> shards = split_clients(train, cfg.clients, cfg.run.seed);
  std::vector<ClientNode> nodes(cfg.clients);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    ClientNode& node = nodes[k];
    node.cfg = cfg.run;
    node.cfg.seed = derive_seed(cfg.run.seed, kClientSeedTag + k);
    node.data = std::move(shards[k]);
    node.oracle = make_oracle(k);
    if (!node.oracle) throw StateError("federated: oracle factory returned null");
  }
  // Sessions hold references into their node.
  for (auto& node : nodes) {
    node.session = std::make_unique<Session>(node.cfg, node.data, test, *node.oracle, node.cfg.peer_hidden);
    node.session->initialize();
  }

  FedReport report;
  auto record_round = [&](std::size_t round) {
    StepRecord rec;
    rec.step = round;
    for (auto& node : nodes) {
      rec.labelled_count += node.session->client().pool().labelled_ids().size();
      rec.selected.insert(rec.selected.end(), node.last_selection.begin(), node.last_selection.end());
    }
    rec.teacher_accuracy = accuracy(server, test);
    report.rounds.push_back(std::move(rec));
  };
  record_round(0);

  std::vector<ParamSet> uploads(cfg.clients);
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    const ParamSet global = server.params();
    std::vector<std::exception_ptr> errors(cfg.clients);
    const auto count = static_cast<std::ptrdiff_t>(cfg.clients);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      const auto k = static_cast<std::size_t>(i);
      ClientNode& node = nodes[k];
      try {
        Session& s = *node.session;
        Channel& channel = s.channel();
        channel.set_step(round);
        channel.record(ModelTransfer{Direction::CloudToClient, MessageKind::ModelDownload, global});
        s.cloud().set_params(global);
        for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
          const EpochStats stats = s.run_epoch();
          if (stats.teacher_checksum_before_unlabelled != stats.teacher_checksum_after_unlabelled) {
            node.isolated = false;
          }
        }
        node.last_selection.clear();
        const std::size_t have = s.client().pool().labelled_ids().size();
        if (have < node.cfg.n_final) {
          const Selection sel = s.client().propose(std::min(node.cfg.budget, node.cfg.n_final - have), nullptr);
          if (!sel.ids.empty()) s.client().annotate(sel.ids);
          node.last_selection = sel.ids;
        }
        uploads[k] = s.cloud().model().params();
        channel.record(ModelTransfer{Direction::ClientToCloud, MessageKind::ModelUpload, uploads[k]});
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    server.set_params(fed_avg(uploads));
    record_round(round);
  }

  for (auto& node : nodes) {
    AuditLog log = node.session->audit();
    log.seal();
    report.client_audits.push_back(std::move(log));
    report.client_protected.push_back(node.session->client().pool().protected_ids());
    report.teacher_isolated = report.teacher_isolated && node.isolated;
  }
  return report;
}

void write_fed_report(const FedReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream metrics(dir / "metrics.jsonl");
  if (!metrics) throw StateError("cannot write " + (dir / "metrics.jsonl").string());
  for (const auto& r : report.rounds) {
    auto j = r.to_json();
    j["round"] = r.step;
    j["server_accuracy"] = r.teacher_accuracy;
    metrics << j.dump() << '\n';
  }
  write_curve_csv(report.rounds, dir / "curve.csv");
  for (std::size_t k = 0; k < report.client_audits.size(); ++k) {
    report.client_audits[k].write_jsonl(dir / ("audit.client" + std::to_string(k) + ".jsonl"));
  }
}

}  // namespace psl
