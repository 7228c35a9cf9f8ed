// SPDX-License-Identifier: Apache-2.0
#pragma once

// Human-in-the-loop serving: an annotation queue shared by the acquisition
// loop and the HTTP handlers.
//
//   GET  /api/status  run state, labelled_count, curve
//   GET  /api/queue   pending queries
//   POST /api/label   {"query_id": n, "label": c}
//   GET  /api/curve   learning curve
//   GET  /            static UI files (serve.ui_dir)

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "psl/cli.hpp"

namespace httplib {
class Server;
}

namespace psl {

struct Query {
  std::uint64_t query_id = 0;
  DatumId datum = 0;
  std::vector<double> features;
};

enum class LabelResult { Accepted, UnknownQuery, InvalidLabel };

/// Pending annotation requests. Only ids handed to the oracle (uploaded,
/// hence safe) are ever enqueued.
class AnnotationQueue {
 public:
  explicit AnnotationQueue(std::size_t classes) : classes_(classes) {}

  /// Enqueues one query per id and blocks until all are labelled.
  /// Throws StateError if the queue is closed while waiting.
  std::vector<int> ask(std::span<const DatumId> ids, const Dataset& ds);
  LabelResult label(std::uint64_t query_id, int label);
  std::vector<Query> pending() const;
  std::size_t delivered() const;
  void close();
  std::size_t classes() const { return classes_; }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t classes_;
  std::uint64_t next_id_ = 0;
  std::deque<Query> pending_;
  std::map<std::uint64_t, int> answers_;
  std::size_t delivered_ = 0;
  bool closed_ = false;
};

/// Oracle backed by a human answering through the queue. Consumes no randomness,
/// so ground-truth answers reproduce a GroundTruthOracle run exactly.
class InteractiveOracle final : public Oracle {
 public:
  explicit InteractiveOracle(AnnotationQueue& queue) : queue_(queue) {}
  std::vector<int> annotate(std::span<const DatumId> ids, const Dataset& ds) override {
    return queue_.ask(ids, ds);
  }
  std::string kind() const override { return "interactive"; }

 private:
  AnnotationQueue& queue_;
};

/// Runs the acquisition loop on a worker thread and serves the HTTP API.
class ServeApp {
 public:
  explicit ServeApp(ExperimentConfig cfg);
  ~ServeApp();
  ServeApp(const ServeApp&) = delete;
  ServeApp& operator=(const ServeApp&) = delete;

  /// Binds (port 0 picks a free port), starts the loop and returns the bound port.
  int start();
  /// Blocks until the acquisition loop ends. Returns false if it failed.
  bool wait_for_run();
  void stop();

  nlohmann::json status() const;
  nlohmann::json curve() const;
  nlohmann::json queue() const;
  AnnotationQueue& annotation_queue() { return *queue_; }
  const std::optional<RunReport>& report() const { return report_; }

 private:
  ExperimentConfig cfg_;
  Dataset train_, test_;
  std::unique_ptr<AnnotationQueue> queue_;
  std::unique_ptr<InteractiveOracle> oracle_;
  std::unique_ptr<httplib::Server> server_;
  std::thread http_thread_, loop_thread_;
  mutable std::mutex mu_;
  std::condition_variable done_cv_;
  std::vector<StepRecord> steps_;
  std::string state_ = "idle";
  std::string error_;
  std::optional<RunReport> report_;
};

}  // namespace psl
