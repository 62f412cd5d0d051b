#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace spbuf {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested storage exceeds the loop's round-trip capacity.
class CapacityError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Stored photon would still be in the loop when the next pulse arrives.
class CollisionError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Drive waveform cannot be synthesized with the requested edge/grid.
class WaveformError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// An operation was called outside its documented preconditions.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A derived measurement is undefined for the given data.
class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class IssueKind {
  Config,   // range/schema problem in a single section
  Physics,  // cross-module timing or budget constraint
  Warning,  // runnable but suspicious
};

struct Issue {
  IssueKind kind;
  std::string field;
  std::string message;
};

/// Collected validation findings; empty (ignoring warnings) means runnable.
struct ValidationReport {
  std::vector<Issue> issues;

  void add(IssueKind kind, std::string field, std::string message) {
    issues.push_back({kind, std::move(field), std::move(message)});
  }
  void append(const ValidationReport& other) {
    issues.insert(issues.end(), other.issues.begin(), other.issues.end());
  }
  [[nodiscard]] bool has(IssueKind kind) const {
    for (const auto& i : issues) {
      if (i.kind == kind) return true;
    }
    return false;
  }
  [[nodiscard]] bool clean() const { return !has(IssueKind::Config) && !has(IssueKind::Physics); }
  /// True if any non-warning message contains `needle`.
  [[nodiscard]] bool mentions(const std::string& needle) const {
    for (const auto& i : issues) {
      if (i.kind != IssueKind::Warning && i.message.find(needle) != std::string::npos) return true;
    }
    return false;
  }
};

}  // namespace spbuf
