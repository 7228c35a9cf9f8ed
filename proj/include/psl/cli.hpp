// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration and the `psl` command line.
//
// A configuration is one JSON document. Every key has a default (see
// default_config_json); a file only lists what it changes and may not add
// keys. `--set a.b=value` overrides one key after the file is read; the value
// is parsed as JSON when possible and taken as a string otherwise.

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "psl/federated.hpp"
#include "psl/protocol.hpp"

namespace psl {

struct DatasetSpec {
  std::string kind = "blobs";  // blobs | moons | csv | idx
  std::size_t n_train = 2000;
  std::size_t n_test = 500;
  std::size_t classes = 4;
  std::size_t dim = 2;
  double spread = 0.4;
  double noise = 0.1;                  // moons
  std::optional<std::uint64_t> seed;   // defaults to the run seed
  std::string train_path, test_path;   // csv
  std::string train_images, train_labels, test_images, test_labels;  // idx
};

struct OracleSpec {
  std::string kind = "ground_truth";  // ground_truth | noisy | interactive
  double noise_rate = 0.0;
};

struct ServeSpec {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string ui_dir;
  bool exit_when_done = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  OracleSpec oracle;
  RunConfig run;
  std::size_t clients = 4;
  std::size_t local_epochs = 30;
  std::size_t rounds = 10;
  std::filesystem::path out_dir = "out";
  ServeSpec serve;

  FedConfig federated() const;
};

nlohmann::json default_config_json();

/// Sets one dotted key, e.g. "run.seed=7". Unknown keys throw ConfigError.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Merges `doc` over the defaults, then converts and validates. Throws ConfigError.
ExperimentConfig parse_experiment(const nlohmann::json& doc);
ExperimentConfig load_experiment(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {});
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Train and test sets for a given run seed.
std::pair<Dataset, Dataset> load_datasets(const DatasetSpec& spec, std::uint64_t run_seed);

/// Simulated annotators. The interactive kind is built by the serve command.
std::unique_ptr<Oracle> make_simulated_oracle(const OracleSpec& spec, std::uint64_t seed);

/// Entry point of the `psl` executable. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace psl
