#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "spbuf/analysis.hpp"
#include "spbuf/control.hpp"
#include "spbuf/detection.hpp"
#include "spbuf/errors.hpp"
#include "spbuf/optics.hpp"

namespace spbuf::cli {

struct DetectorSettings {
  detection::DetectorModel model;
  bool hbt = false;             // 50/50 splitter and a second detector
  double splitter_ratio = 0.5;  // fraction routed to channel A
};

struct AnalysisSettings {
  double bin_width_ps = 1.0;
  double window_start_ps = 0.0;
  std::optional<double> window_end_ps;  // unset: one repetition period
  double gate_half_width_ps = 40.0;
  analysis::Normalization normalization = analysis::Normalization::MaxPeak;
  int fit_min_k = 1;
  bool weighted_fit = false;
  bool dead_time_correction = true;
  std::optional<std::uint64_t> g2_n_pulses;  // unset: n_pulses
  std::vector<int> sweep_k = {1, 2, 3, 4, 5};
};

/// One experiment, with every free parameter spelled out.
struct ExperimentConfig {
  optics::SourceModel source;
  optics::BufferModel buffer;
  DetectorSettings detector;
  control::ProgramSettings control;
  AnalysisSettings analysis;
  std::uint64_t n_pulses = 1'000'000;
  std::uint64_t master_seed = 1;
  std::string output_dir = "out";
  std::uint64_t chunk_pulses = 1U << 16;
  bool dump_events = true;
  bool dump_records = false;

  /// Fills every optional that has a derived default.
  void resolve();

  [[nodiscard]] detection::HistogramSpec histogram_spec() const;
  [[nodiscard]] std::uint64_t g2_pulses() const {
    return analysis.g2_n_pulses.value_or(n_pulses);
  }
};

/// Parse or schema failure; `issues` carries one entry per offending field.
class ConfigLoadError : public ConfigError {
 public:
  ConfigLoadError(const std::string& what, std::vector<Issue> issues)
      : ConfigError(what), issues_(std::move(issues)) {}
  [[nodiscard]] const std::vector<Issue>& issues() const { return issues_; }

 private:
  std::vector<Issue> issues_;
};

/// Strict parse: unknown keys and wrong types are errors. Range checks are
/// left to validate() so that they can be reported together.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Resolved configuration with every field present.
nlohmann::json to_json(const ExperimentConfig& cfg);

/// Section invariants, run-assembly rules and control-program validation.
ValidationReport validate(const ExperimentConfig& cfg);

}  // namespace spbuf::cli
