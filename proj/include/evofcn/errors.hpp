#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace evofcn {

// Bad input values: out-of-domain genomes, inconsistent shapes, bad config.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
  ValidationError(const std::string& what, std::vector<std::string> violations)
      : std::invalid_argument(what), violations_(std::move(violations)) {}

  const std::vector<std::string>& violations() const noexcept { return violations_; }

 private:
  std::vector<std::string> violations_;
};

// File-level failures: unreadable paths, malformed headers, truncated payloads.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A candidate could not be scored (worker error reply, timeout, worker exit).
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The worker violated the line protocol. Carries the offending raw line.
class ProtocolError : public EvaluationError {
 public:
  ProtocolError(const std::string& what, std::string raw_line)
      : EvaluationError(what + ": " + raw_line), raw_line_(std::move(raw_line)) {}

  const std::string& raw_line() const noexcept { return raw_line_; }

 private:
  std::string raw_line_;
};

// A metric that has no value for the given inputs (e.g. distances to an empty mask).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace evofcn
