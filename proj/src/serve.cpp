// SPDX-License-Identifier: Apache-2.0
#include "psl/serve.hpp"

#include <algorithm>
#include <filesystem>

#include "httplib.h"
#include "psl/errors.hpp"

namespace psl {

using nlohmann::json;

std::vector<int> AnnotationQueue::ask(std::span<const DatumId> ids, const Dataset& ds) {
  std::vector<std::uint64_t> tickets;
  std::unique_lock lock(mu_);
  if (closed_) throw StateError("annotation queue is closed");
  for (DatumId id : ids) {
    if (id >= ds.size()) throw StateError("annotation request for unknown id " + std::to_string(id));
    const auto row = ds.features.row(id);
    pending_.push_back(Query{next_id_, id, std::vector<double>(row.begin(), row.end())});
    tickets.push_back(next_id_++);
  }
  cv_.wait(lock, [&] {
    return closed_ || std::all_of(tickets.begin(), tickets.end(), [&](auto t) { return answers_.count(t) != 0; });
  });
  if (closed_) throw StateError("annotation queue closed while waiting for labels");
  std::vector<int> labels;
  for (auto t : tickets) {
    labels.push_back(answers_.at(t));
    answers_.erase(t);
  }
  return labels;
}

LabelResult AnnotationQueue::label(std::uint64_t query_id, int label) {
  {
    std::lock_guard lock(mu_);
    const auto it = std::find_if(pending_.begin(), pending_.end(),
                                 [&](const Query& q) { return q.query_id == query_id; });
    if (it == pending_.end()) return LabelResult::UnknownQuery;
    if (label < 0 || static_cast<std::size_t>(label) >= classes_) return LabelResult::InvalidLabel;
    pending_.erase(it);
    answers_[query_id] = label;
    ++delivered_;
  }
  cv_.notify_all();
  return LabelResult::Accepted;
}

std::vector<Query> AnnotationQueue::pending() const {
  std::lock_guard lock(mu_);
  return {pending_.begin(), pending_.end()};
}

std::size_t AnnotationQueue::delivered() const {
  std::lock_guard lock(mu_);
  return delivered_;
}

void AnnotationQueue::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

namespace {

json curve_points(const std::vector<StepRecord>& steps) {
  json points = json::array();
  for (const auto& s : steps) {
    points.push_back({{"step", s.step}, {"labelled_count", s.labelled_count}, {"accuracy", s.teacher_accuracy}});
  }
  return points;
}

void reply_json(httplib::Response& res, const json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

}  // namespace

ServeApp::ServeApp(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  auto [train, test] = load_datasets(cfg_.dataset, cfg_.run.seed);
  train_ = std::move(train);
  test_ = std::move(test);
  queue_ = std::make_unique<AnnotationQueue>(train_.classes);
  oracle_ = std::make_unique<InteractiveOracle>(*queue_);
  server_ = std::make_unique<httplib::Server>();

  server_->Get("/api/status", [this](const httplib::Request&, httplib::Response& res) { reply_json(res, status()); });
  server_->Get("/api/queue", [this](const httplib::Request&, httplib::Response& res) { reply_json(res, queue()); });
  server_->Get("/api/curve", [this](const httplib::Request&, httplib::Response& res) { reply_json(res, curve()); });
  server_->Post("/api/label", [this](const httplib::Request& req, httplib::Response& res) {
    const json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("query_id") || !body.contains("label") ||
        !body["query_id"].is_number_unsigned() || !body["label"].is_number_integer()) {
      reply_json(res, {{"error", "expected {\"query_id\": <id>, \"label\": <class>}"}}, 400);
      return;
    }
    const auto qid = body["query_id"].get<std::uint64_t>();
    switch (queue_->label(qid, body["label"].get<int>())) {
      case LabelResult::Accepted:
        reply_json(res, {{"ok", true}, {"query_id", qid}});
        return;
      case LabelResult::UnknownQuery:
        reply_json(res, {{"error", "unknown or already answered query " + std::to_string(qid)}}, 404);
        return;
      case LabelResult::InvalidLabel:
        reply_json(res, {{"error", "label must be in [0, " + std::to_string(queue_->classes()) + ")"}}, 422);
        return;
    }
  });
  if (!cfg_.serve.ui_dir.empty() && std::filesystem::is_directory(cfg_.serve.ui_dir)) {
    server_->set_mount_point("/", cfg_.serve.ui_dir);
  } else {
    server_->Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("psl annotation server: see /api/status, /api/queue, /api/curve\n", "text/plain");
    });
  }
}

ServeApp::~ServeApp() { stop(); }

int ServeApp::start() {
  int port = cfg_.serve.port;
  if (port == 0) {
    port = server_->bind_to_any_port(cfg_.serve.host);
  } else if (!server_->bind_to_port(cfg_.serve.host, port)) {
    port = -1;
  }
  if (port < 0) throw StateError("cannot bind " + cfg_.serve.host + ":" + std::to_string(cfg_.serve.port));
  http_thread_ = std::thread([this] { server_->listen_after_bind(); });
  {
    std::lock_guard lock(mu_);
    state_ = "running";
  }
  loop_thread_ = std::thread([this] {
    try {
      RunReport report = run_acquisition_loop(cfg_.run, train_, test_, *oracle_, [this](const StepRecord& s) {
        std::lock_guard lock(mu_);
        steps_.push_back(s);
      });
      std::filesystem::create_directories(cfg_.out_dir);
      write_run_report(report, ReportPaths::in(cfg_.out_dir));
      std::lock_guard lock(mu_);
      report_ = std::move(report);
      state_ = "finished";
    } catch (const std::exception& e) {
      std::lock_guard lock(mu_);
      state_ = "failed";
      error_ = e.what();
    }
    done_cv_.notify_all();
  });
  return port;
}

bool ServeApp::wait_for_run() {
  std::unique_lock lock(mu_);
  done_cv_.wait(lock, [&] { return state_ == "finished" || state_ == "failed" || state_ == "stopped"; });
  return state_ == "finished";
}

void ServeApp::stop() {
  queue_->close();
  if (loop_thread_.joinable()) loop_thread_.join();
  {
    std::lock_guard lock(mu_);
    if (state_ == "running" || state_ == "idle") state_ = "stopped";
  }
  done_cv_.notify_all();
  if (server_) server_->stop();
  if (http_thread_.joinable()) http_thread_.join();
}

json ServeApp::status() const {
  std::lock_guard lock(mu_);
  json s = {{"state", state_},
            {"strategy", to_string(cfg_.run.strategy)},
            {"labelled_count", queue_->delivered()},
            {"n_final", cfg_.run.n_final},
            {"pending", queue_->pending().size()},
            {"step", steps_.empty() ? 0 : steps_.back().step},
            {"curve", curve_points(steps_)}};
  if (!error_.empty()) s["error"] = error_;
  return s;
}

json ServeApp::curve() const {
  std::lock_guard lock(mu_);
  return {{"points", curve_points(steps_)}};
}

json ServeApp::queue() const {
  json class_names = json::array();
  for (std::size_t c = 0; c < train_.classes; ++c) class_names.push_back("class " + std::to_string(c));
  json items = json::array();
  for (const auto& q : queue_->pending()) {
    items.push_back({{"query_id", q.query_id}, {"features", q.features}, {"class_names", class_names}});
  }
  return {{"queries", items}};
}

}  // namespace psl
