// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace psl {

/// Tensor or parameter layouts that do not line up.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the operation's domain (non-positive temperature, empty batch, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// Operation invoked in the wrong state (backward before forward, unknown id, ...).
struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed input file. `where` carries the line (text formats) or byte offset (binary).
struct ParseError : std::runtime_error {
  ParseError(const std::string& what, std::size_t where)
      : std::runtime_error(what + " (at " + std::to_string(where) + ")"), location(where) {}
  std::size_t location;
};

/// Experiment configuration that is malformed or names an unknown key.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A protected datum was about to cross the client/cloud boundary. Always fatal.
struct IsolationViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace psl
