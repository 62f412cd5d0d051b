#include "spbuf/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "spbuf/format.hpp"

namespace spbuf::cli {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object into typed fields, collecting every
// problem instead of stopping at the first one.
class SectionReader {
 public:
  SectionReader(const json& root, const std::string& name, std::vector<Issue>& issues)
      : name_(name), issues_(issues) {
    if (!root.contains(name)) return;
    const json& v = root.at(name);
    if (!v.is_object()) {
      error(name, "expected an object");
      return;
    }
    obj_ = &v;
  }

  // Reader for the fields of the top-level object itself.
  SectionReader(const json& root, std::vector<Issue>& issues) : issues_(issues) {
    if (root.is_object()) obj_ = &root;
  }

  /// Marks a key as known without reading it.
  void skip(const char* key) { seen_.insert(key); }

  void number(const char* key, double& target) {
    if (const json* v = take(key)) {
      if (v->is_number()) {
        target = v->get<double>();
      } else {
        error(path(key), "expected a number");
      }
    }
  }

  void nullable_number(const char* key, double& target, double null_value) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        target = null_value;
      } else if (v->is_number()) {
        target = v->get<double>();
      } else {
        error(path(key), "expected a number or null");
      }
    }
  }

  void optional_number(const char* key, std::optional<double>& target) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        target.reset();
      } else if (v->is_number()) {
        target = v->get<double>();
      } else {
        error(path(key), "expected a number or null");
      }
    }
  }

  void integer(const char* key, int& target) {
    if (const json* v = take(key)) {
      if (v->is_number_integer() && v->get<std::int64_t>() >= std::numeric_limits<int>::min() &&
          v->get<std::int64_t>() <= std::numeric_limits<int>::max()) {
        target = v->get<int>();
      } else {
        error(path(key), "expected an integer");
      }
    }
  }

  void unsigned_integer(const char* key, std::uint64_t& target) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        target = v->get<std::uint64_t>();
      } else {
        error(path(key), "expected a non-negative integer");
      }
    }
  }

  void optional_unsigned(const char* key, std::optional<std::uint64_t>& target) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        target.reset();
      } else if (v->is_number_unsigned() || (v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        target = v->get<std::uint64_t>();
      } else {
        error(path(key), "expected a non-negative integer or null");
      }
    }
  }

  void boolean(const char* key, bool& target) {
    if (const json* v = take(key)) {
      if (v->is_boolean()) {
        target = v->get<bool>();
      } else {
        error(path(key), "expected true or false");
      }
    }
  }

  void string(const char* key, std::string& target) {
    if (const json* v = take(key)) {
      if (v->is_string()) {
        target = v->get<std::string>();
      } else {
        error(path(key), "expected a string");
      }
    }
  }

  void int_list(const char* key, std::vector<int>& target) {
    if (const json* v = take(key)) {
      if (!v->is_array()) {
        error(path(key), "expected an array of integers");
        return;
      }
      std::vector<int> out;
      for (const auto& e : *v) {
        if (!e.is_number_integer()) {
          error(path(key), "expected an array of integers");
          return;
        }
        out.push_back(e.get<int>());
      }
      target = std::move(out);
    }
  }

  template <class Enum>
  void choice(const char* key, Enum& target, std::initializer_list<std::pair<const char*, Enum>> options) {
    if (const json* v = take(key)) {
      if (v->is_string()) {
        for (const auto& [label, value] : options) {
          if (v->get<std::string>() == label) {
            target = value;
            return;
          }
        }
      }
      std::string allowed;
      for (const auto& [label, value] : options) allowed += std::string(allowed.empty() ? "" : ", ") + label;
      error(path(key), "expected one of: " + allowed);
    }
  }

  /// Anything not consumed is an unknown key.
  void finish() {
    if (!obj_) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!seen_.contains(key)) error(path(key), "unknown key");
    }
  }

 private:
  const json* take(const char* key) {
    if (!obj_) return nullptr;
    seen_.insert(key);
    auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  std::string path(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

  void error(const std::string& field, const std::string& message) {
    issues_.push_back({IssueKind::Config, field, message});
  }

  std::string name_;
  std::vector<Issue>& issues_;
  const json* obj_ = nullptr;
  std::set<std::string> seen_;
};

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

std::string describe(const std::vector<Issue>& issues) {
  std::string s = "invalid configuration:";
  for (const auto& i : issues) s += "\n  " + i.field + ": " + i.message;
  return s;
}

json nullable(double v) { return std::isinf(v) ? json() : json(v); }

}  // namespace

void ExperimentConfig::resolve() {
  if (!control.f3db_ghz) control.f3db_ghz = buffer.eo_bandwidth_ghz;
  if (!analysis.window_end_ps) {
    analysis.window_end_ps = analysis.window_start_ps + source.repetition_period_ps;
  }
  if (!analysis.g2_n_pulses) analysis.g2_n_pulses = n_pulses;
}

detection::HistogramSpec ExperimentConfig::histogram_spec() const {
  detection::HistogramSpec spec;
  spec.trigger_period_ps = source.repetition_period_ps;
  spec.bin_width_ps = analysis.bin_width_ps;
  spec.t0_ps = analysis.window_start_ps;
  spec.t1_ps = analysis.window_end_ps.value_or(analysis.window_start_ps + source.repetition_period_ps);
  return spec;
}

ExperimentConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const auto [line, col] = line_and_column(text, e.byte == 0 ? 0 : e.byte - 1);
    const std::string where = "line " + std::to_string(line) + ", column " + std::to_string(col);
    throw ConfigLoadError("config syntax error at " + where + ": " + e.what(),
                          {{IssueKind::Config, where, e.what()}});
  }
  if (!root.is_object()) {
    throw ConfigLoadError("config must be a JSON object", {{IssueKind::Config, "", "expected an object"}});
  }

  ExperimentConfig cfg;
  std::vector<Issue> issues;

  {
    SectionReader s(root, "source", issues);
    s.choice("kind", cfg.source.kind, {{"weak_coherent", optics::SourceKind::WeakCoherent},
                                       {"single_fock", optics::SourceKind::SingleFock}});
    s.number("mean_photon_number", cfg.source.mean_photon_number);
    s.integer("fock_n", cfg.source.fock_n);
    s.number("repetition_period_ps", cfg.source.repetition_period_ps);
    s.number("pulse_epoch_ps", cfg.source.pulse_epoch_ps);
    s.number("wavelength_nm", cfg.source.wavelength_nm);
    s.finish();
  }
  {
    SectionReader s(root, "buffer", issues);
    auto& b = cfg.buffer;
    s.number("round_trip_time_ps", b.round_trip_time_ps);
    s.number("round_trip_loss_db", b.round_trip_loss_db);
    s.number("input_coupling_loss_db", b.input_coupling_loss_db);
    s.number("output_coupling_loss_db", b.output_coupling_loss_db);
    s.number("insertion_loss_budget_db", b.insertion_loss_budget_db);
    s.number("v_pi_volts", b.v_pi_volts);
    s.nullable_number("switch_extinction_db", b.switch_extinction_db,
                      std::numeric_limits<double>::infinity());
    s.number("eo_bandwidth_ghz", b.eo_bandwidth_ghz);
    s.integer("max_round_trips", b.max_round_trips);
    s.finish();
  }
  {
    SectionReader s(root, "detector", issues);
    auto& d = cfg.detector;
    s.number("efficiency", d.model.efficiency);
    s.number("jitter_sigma_ps", d.model.jitter_sigma_ps);
    s.number("dark_rate_hz", d.model.dark_rate_hz);
    s.number("dead_time_ps", d.model.dead_time_ps);
    s.boolean("hbt", d.hbt);
    s.number("splitter_ratio", d.splitter_ratio);
    s.finish();
  }
  {
    SectionReader s(root, "control", issues);
    auto& c = cfg.control;
    s.number("capture_time_ps", c.capture_time_ps);
    s.integer("hold_round_trips", c.hold_round_trips);
    s.number("gate_window_ps", c.gate_window_ps);
    s.number("edge_time_ps", c.edge_time_ps);
    s.optional_number("f3db_ghz", c.f3db_ghz);
    s.number("sample_step_ps", c.sample_step_ps);
    s.finish();
  }
  {
    SectionReader s(root, "analysis", issues);
    auto& a = cfg.analysis;
    s.number("bin_width_ps", a.bin_width_ps);
    s.number("window_start_ps", a.window_start_ps);
    s.optional_number("window_end_ps", a.window_end_ps);
    s.number("gate_half_width_ps", a.gate_half_width_ps);
    s.choice("normalization", a.normalization,
             {{"max_peak", analysis::Normalization::MaxPeak},
              {"first_peak", analysis::Normalization::FirstPeak}});
    s.integer("fit_min_k", a.fit_min_k);
    s.boolean("weighted_fit", a.weighted_fit);
    s.boolean("dead_time_correction", a.dead_time_correction);
    s.optional_unsigned("g2_n_pulses", a.g2_n_pulses);
    s.int_list("sweep_k", a.sweep_k);
    s.finish();
  }
  {
    SectionReader s(root, issues);
    for (const char* section : {"source", "buffer", "detector", "control", "analysis"}) s.skip(section);
    s.unsigned_integer("n_pulses", cfg.n_pulses);
    s.unsigned_integer("master_seed", cfg.master_seed);
    s.string("output_dir", cfg.output_dir);
    s.unsigned_integer("chunk_pulses", cfg.chunk_pulses);
    s.boolean("dump_events", cfg.dump_events);
    s.boolean("dump_records", cfg.dump_records);
    s.finish();
  }

  if (!issues.empty()) throw ConfigLoadError(describe(issues), std::move(issues));
  cfg.resolve();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigLoadError("cannot open config file " + path.string(),
                          {{IssueKind::Config, path.string(), "cannot open file"}});
  }
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

json to_json(const ExperimentConfig& in) {
  ExperimentConfig cfg = in;
  cfg.resolve();
  const auto& s = cfg.source;
  const auto& b = cfg.buffer;
  const auto& d = cfg.detector;
  const auto& a = cfg.analysis;
  json control;
  control::to_json(control, cfg.control);
  return json{
      {"source",
       {{"kind", optics::to_string(s.kind)},
        {"mean_photon_number", s.mean_photon_number},
        {"fock_n", s.fock_n},
        {"repetition_period_ps", s.repetition_period_ps},
        {"pulse_epoch_ps", s.pulse_epoch_ps},
        {"wavelength_nm", s.wavelength_nm}}},
      {"buffer",
       {{"round_trip_time_ps", b.round_trip_time_ps},
        {"round_trip_loss_db", b.round_trip_loss_db},
        {"input_coupling_loss_db", b.input_coupling_loss_db},
        {"output_coupling_loss_db", b.output_coupling_loss_db},
        {"insertion_loss_budget_db", b.insertion_loss_budget_db},
        {"v_pi_volts", b.v_pi_volts},
        {"switch_extinction_db", nullable(b.switch_extinction_db)},
        {"eo_bandwidth_ghz", b.eo_bandwidth_ghz},
        {"max_round_trips", b.max_round_trips}}},
      {"detector",
       {{"efficiency", d.model.efficiency},
        {"jitter_sigma_ps", d.model.jitter_sigma_ps},
        {"dark_rate_hz", d.model.dark_rate_hz},
        {"dead_time_ps", d.model.dead_time_ps},
        {"hbt", d.hbt},
        {"splitter_ratio", d.splitter_ratio}}},
      {"control", control},
      {"analysis",
       {{"bin_width_ps", a.bin_width_ps},
        {"window_start_ps", a.window_start_ps},
        {"window_end_ps", *a.window_end_ps},
        {"gate_half_width_ps", a.gate_half_width_ps},
        {"normalization", analysis::to_string(a.normalization)},
        {"fit_min_k", a.fit_min_k},
        {"weighted_fit", a.weighted_fit},
        {"dead_time_correction", a.dead_time_correction},
        {"g2_n_pulses", *a.g2_n_pulses},
        {"sweep_k", a.sweep_k}}},
      {"n_pulses", cfg.n_pulses},
      {"master_seed", cfg.master_seed},
      {"output_dir", cfg.output_dir},
      {"chunk_pulses", cfg.chunk_pulses},
      {"dump_events", cfg.dump_events},
      {"dump_records", cfg.dump_records}};
}

ValidationReport validate(const ExperimentConfig& cfg) {
  ValidationReport r;
  r.append(cfg.source.check());
  r.append(cfg.buffer.check());
  r.append(cfg.detector.model.check(cfg.buffer.round_trip_time_ps));
  if (!(cfg.detector.splitter_ratio >= 0.0 && cfg.detector.splitter_ratio <= 1.0)) {
    r.add(IssueKind::Config, "detector.splitter_ratio", "must lie in [0, 1]");
  }
  if (cfg.n_pulses < 1) r.add(IssueKind::Config, "n_pulses", "must be >= 1");
  if (cfg.chunk_pulses < 1) r.add(IssueKind::Config, "chunk_pulses", "must be >= 1");
  if (cfg.g2_pulses() < 1) r.add(IssueKind::Config, "analysis.g2_n_pulses", "must be >= 1");

  const auto& a = cfg.analysis;
  try {
    (void)cfg.histogram_spec().bin_count();
  } catch (const ConfigError& e) {
    r.add(IssueKind::Config, "analysis.bin_width_ps", e.what());
  }
  if (!(a.gate_half_width_ps > 0.0) || a.gate_half_width_ps >= 0.5 * cfg.buffer.round_trip_time_ps) {
    r.add(IssueKind::Config, "analysis.gate_half_width_ps",
          "must lie in (0, round_trip_time/2) so peak gates do not overlap");
  }
  if (a.fit_min_k < 0) r.add(IssueKind::Config, "analysis.fit_min_k", "must be >= 0");
  if (a.dead_time_correction && cfg.detector.model.dead_time_ps > 0.0) {
    const auto spec = cfg.histogram_spec();
    if (std::abs((spec.t1_ps - spec.t0_ps) - spec.trigger_period_ps) > 1e-9) {
      r.add(IssueKind::Config, "analysis.window_end_ps",
            "dead-time correction needs a histogram window of one full repetition period");
    }
  }
  for (int k : a.sweep_k) {
    if (k < 0 || k > cfg.buffer.max_round_trips) {
      r.add(IssueKind::Physics, "analysis.sweep_k",
            "capacity exceeded: sweep entry " + std::to_string(k) + " outside [0, " +
                std::to_string(cfg.buffer.max_round_trips) + "]");
    }
  }

  if (r.has(IssueKind::Config)) return r;
  r.append(optics::check_compatible(cfg.source, cfg.buffer));
  r.append(control::validate_program(cfg.control, cfg.source, cfg.buffer));
  return r;
}

}  // namespace spbuf::cli
