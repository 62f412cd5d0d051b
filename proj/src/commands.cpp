#include "spbuf/commands.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <ostream>
#include <regex>
#include <sstream>

#include "spbuf/analysis.hpp"
#include "spbuf/config.hpp"
#include "spbuf/format.hpp"
#include "spbuf/pipeline.hpp"

namespace spbuf::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* kind_label(IssueKind k) {
  switch (k) {
    case IssueKind::Config: return "config";
    case IssueKind::Physics: return "physics";
    case IssueKind::Warning: return "warning";
  }
  return "?";
}

void print_issues(const std::vector<Issue>& issues, std::ostream& os) {
  for (const auto& i : issues) {
    os << kind_label(i.kind) << ": " << (i.field.empty() ? "" : i.field + ": ") << i.message << '\n';
  }
}

json issues_json(const ValidationReport& r) {
  json out = json::array();
  for (const auto& i : r.issues) {
    out.push_back({{"kind", kind_label(i.kind)}, {"field", i.field}, {"message", i.message}});
  }
  return out;
}

/// Files of one run; every write is checksummed for the manifest.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& bytes) {
    std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + (dir_ / name).string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.close();
    if (!f) throw ConfigError("failed writing " + (dir_ / name).string());
    entries_.push_back({{"file", name}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}});
  }

  /// Written last, through a temporary file and a rename.
  void write_manifest(json manifest) const {
    manifest["outputs"] = entries_;
    const fs::path tmp = dir_ / "manifest.json.tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      f << manifest.dump(2) << '\n';
      if (!f) throw ConfigError("cannot write manifest");
    }
    fs::rename(tmp, dir_ / "manifest.json");
  }

  [[nodiscard]] const fs::path& dir() const { return dir_; }

 private:
  fs::path dir_;
  json entries_ = json::array();
};

template <class Fn>
std::string render(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

json base_manifest(const std::string& command, const ExperimentConfig& cfg, unsigned jobs,
                   const std::string& started) {
  return {{"tool", "spbuf"},
          {"version", kToolVersion},
          {"command", command},
          {"started_utc", started},
          {"master_seed", cfg.master_seed},
          {"seed_derivation",
           "pulse j draws from stream_key(master_seed, pulse, j); detection chunk c "
           "(chunk_pulses pulses) draws from stream_key(master_seed, splitter|clicks_a|clicks_b, c)"},
          {"jobs", jobs},
          {"config", to_json(cfg)}};
}

/// Config snapshot for data files: everything except where the files went.
json provenance_config(const ExperimentConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  return j;
}

json tally_json(const optics::LossTally& t) {
  return {{"photons_emitted", t.photons_emitted}, {"exited", t.exited},
          {"lost_input", t.lost_input},           {"lost_loop", t.lost_loop},
          {"lost_output", t.lost_output},         {"overflow", t.overflow}};
}

/// Loads and validates; returns an exit code on failure.
std::optional<int> load_validated(const CommandOptions& opt, ExperimentConfig& cfg,
                                  ValidationReport& report, std::ostream& err) {
  try {
    cfg = load_config(opt.config);
  } catch (const ConfigLoadError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (opt.out) cfg.output_dir = opt.out->string();
  report = validate(cfg);
  if (report.has(IssueKind::Config)) {
    print_issues(report.issues, err);
    return kExitConfig;
  }
  if (report.has(IssueKind::Physics)) {
    print_issues(report.issues, err);
    return kExitPhysics;
  }
  for (const auto& i : report.issues) err << "warning: " << i.field << ": " << i.message << '\n';
  return std::nullopt;
}

control::ProgramSettings settings_for(const ExperimentConfig& cfg, int k) {
  control::ProgramSettings s = cfg.control;
  s.hold_round_trips = k;
  return s;
}

AcquisitionOptions acquisition_options(const ExperimentConfig& cfg, unsigned jobs) {
  AcquisitionOptions o;
  o.hbt = cfg.detector.hbt;
  o.splitter_ratio = cfg.detector.splitter_ratio;
  o.histogram = cfg.histogram_spec();
  o.chunk_pulses = cfg.chunk_pulses;
  o.jobs = jobs;
  return o;
}

/// Peak integral at round trip k, dead-time corrected per channel if enabled.
double peak_counts(const Acquisition& acq, const ExperimentConfig& cfg, int k) {
  const double centre = cfg.control.capture_time_ps + k * cfg.buffer.round_trip_time_ps;
  const double half = cfg.analysis.gate_half_width_ps;
  const double dead = cfg.detector.model.dead_time_ps;
  const bool correct = cfg.analysis.dead_time_correction && dead > 0.0;
  double total = 0.0;
  for (const auto* h : {&acq.hist_a, &acq.hist_b}) {
    if (h->counts.empty()) continue;
    total += correct ? analysis::gate_integral(analysis::correct_dead_time(*h, dead), centre, half)
                     : analysis::gate_integral(*h, centre, half);
  }
  return total;
}

std::string histogram_header_text(const detection::Histogram& h) {
  return detection::histogram_header(h).dump(2) + "\n";
}

template <class Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigLoadError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const CapacityError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPhysics;
  } catch (const CollisionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPhysics;
  } catch (const WaveformError& e) {
    err << "error: " << e.what() << '\n';
    return kExitPhysics;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const AnalysisError& e) {
    err << "error: " << e.what() << '\n';
    return kExitAnalysis;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

void print_summary(const json& summary, Format format, std::ostream& out) {
  if (format == Format::Json) {
    out << summary.dump(2) << '\n';
    return;
  }
  out << "key,value\n";
  for (const auto& [key, value] : summary.items()) {
    out << key << ',' << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
  }
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

std::vector<int> parse_k_list(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ConfigError("empty entry in k list '" + text + "'");
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      ks.push_back(static_cast<int>(parse_uint(item, "k")));
    } else {
      const auto lo = static_cast<int>(parse_uint(std::string_view(item).substr(0, dash), "k"));
      const auto hi = static_cast<int>(parse_uint(std::string_view(item).substr(dash + 1), "k"));
      if (hi < lo) throw ConfigError("descending k range '" + item + "'");
      for (int k = lo; k <= hi; ++k) ks.push_back(k);
    }
  }
  if (ks.empty()) throw ConfigError("k list is empty");
  return ks;
}

int cmd_validate(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig cfg;
    try {
      cfg = load_config(opt.config);
    } catch (const ConfigLoadError& e) {
      print_issues(e.issues(), out);
      return static_cast<int>(kExitConfig);
    }
    const ValidationReport report = validate(cfg);
    print_issues(report.issues, out);
    if (report.has(IssueKind::Config)) return static_cast<int>(kExitConfig);
    if (report.has(IssueKind::Physics)) return static_cast<int>(kExitPhysics);
    out << "ok\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_simulate(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string started = utc_now();
    ExperimentConfig cfg;
    ValidationReport report;
    if (auto code = load_validated(opt, cfg, report, err)) return *code;

    const auto program = control::ControlProgram::from_settings(cfg.control, cfg.buffer, cfg.source);
    AcquisitionOptions aopt = acquisition_options(cfg, opt.jobs);
    aopt.keep_events = cfg.dump_events;
    aopt.keep_records = cfg.dump_records;
    if (cfg.detector.hbt) {
      aopt.g2_gate = analysis::storage_gate(cfg.control.capture_time_ps, cfg.control.hold_round_trips,
                                            cfg.buffer, cfg.analysis.gate_half_width_ps);
    }
    const Acquisition acq = acquire(cfg.source, cfg.buffer, program, cfg.detector.model,
                                    cfg.n_pulses, cfg.master_seed, aopt);

    OutputSet files(cfg.output_dir);
    const detection::Histogram hist = acq.combined();
    files.write("histogram.csv", render([&](std::ostream& os) { detection::write_histogram_csv(os, hist); }));
    files.write("histogram.json", histogram_header_text(hist));
    if (cfg.dump_events) {
      files.write("events.csv", render([&](std::ostream& os) { detection::write_events_csv(os, acq.events); }));
    }
    if (cfg.dump_records) {
      files.write("records.csv", render([&](std::ostream& os) { optics::write_records_csv(os, acq.records); }));
    }
    json program_json;
    control::to_json(program_json, program.settings());
    files.write("program.json", program_json.dump(2) + "\n");
    if (program.waveform()) {
      files.write("waveform.csv", render([&](std::ostream& os) { control::write_waveform_csv(os, *program.waveform()); }));
    }

    json errors = json::array();
    json summary = {{"n_pulses", cfg.n_pulses},
                    {"master_seed", cfg.master_seed},
                    {"hold_round_trips", cfg.control.hold_round_trips},
                    {"histogram_total", hist.total()},
                    {"photons_exited", acq.tally.exited},
                    {"dropped_by_dead_time", acq.dropped_by_dead_time}};
    int code = kExitOk;
    if (cfg.detector.hbt) {
      try {
        const auto g2 = analysis::g2_from_counts(acq.g2, acq.n_triggers);
        json g2_json = analysis::to_json(g2);
        g2_json["hold_round_trips"] = cfg.control.hold_round_trips;
        g2_json["master_seed"] = cfg.master_seed;
        g2_json["config"] = provenance_config(cfg);
        files.write("g2.json", g2_json.dump(2) + "\n");
        summary["g2"] = g2.g2;
        summary["g2_stderr"] = g2.std_error;
      } catch (const AnalysisError& e) {
        errors.push_back(std::string("g2: ") + e.what());
        code = kExitAnalysis;
      }
    }

    json manifest = base_manifest("simulate", cfg, opt.jobs, started);
    manifest["tally"] = tally_json(acq.tally);
    manifest["dropped_by_dead_time"] = acq.dropped_by_dead_time;
    manifest["warnings"] = issues_json(report);
    manifest["errors"] = errors;
    manifest["finished_utc"] = utc_now();
    files.write_manifest(manifest);
    print_summary(summary, opt.format, out);
    for (const auto& e : errors) err << "error: " << e.get<std::string>() << '\n';
    return code;
  });
}

int cmd_sweep_storage(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const std::string started = utc_now();
    ExperimentConfig cfg;
    ValidationReport report;
    if (auto code = load_validated(opt, cfg, report, err)) return *code;
    const std::vector<int> ks = opt.k_list.empty() ? cfg.analysis.sweep_k : opt.k_list;
    if (ks.empty()) {
      err << "error: empty k list\n";
      return static_cast<int>(kExitConfig);
    }

    // All-or-nothing: every storage setting must be valid before anything runs.
    ValidationReport sweep_report;
    for (int k : ks) {
      auto r = control::validate_program(settings_for(cfg, k), cfg.source, cfg.buffer);
      for (auto& i : r.issues) {
        if (i.kind != IssueKind::Warning) {
          i.message = "k=" + std::to_string(k) + ": " + i.message;
          sweep_report.issues.push_back(i);
        }
      }
    }
    if (!sweep_report.clean()) {
      print_issues(sweep_report.issues, err);
      return static_cast<int>(sweep_report.has(IssueKind::Config) ? kExitConfig : kExitPhysics);
    }

    OutputSet files(cfg.output_dir);
    json errors = json::array();
    std::vector<std::pair<int, double>> raw;
    std::string g2_csv = "k,g2,stderr,n_coincidences,n_a,n_b,n_triggers\n";
    json g2_rows = json::array();

    for (int k : ks) {
      const auto program = control::ControlProgram::from_settings(settings_for(cfg, k), cfg.buffer, cfg.source);
      const analysis::Gate gate = analysis::storage_gate(cfg.control.capture_time_ps, k, cfg.buffer,
                                                         cfg.analysis.gate_half_width_ps);
      AcquisitionOptions aopt = acquisition_options(cfg, opt.jobs);
      if (cfg.detector.hbt) aopt.g2_gate = gate;
      const Acquisition acq = acquire(cfg.source, cfg.buffer, program, cfg.detector.model,
                                      cfg.n_pulses, cfg.master_seed, aopt);
      const detection::Histogram hist = acq.combined();
      const std::string stem = "fig2a_hist_k" + std::to_string(k);
      files.write(stem + ".csv", render([&](std::ostream& os) { detection::write_histogram_csv(os, hist); }));
      files.write(stem + ".json", histogram_header_text(hist));
      raw.emplace_back(k, peak_counts(acq, cfg, k));

      analysis::G2Counts counts = acq.g2;
      std::uint64_t triggers = acq.n_triggers;
      if (!(cfg.detector.hbt && cfg.g2_pulses() == cfg.n_pulses)) {
        AcquisitionOptions gopt = acquisition_options(cfg, opt.jobs);
        gopt.hbt = true;
        gopt.g2_gate = gate;
        const Acquisition hbt = acquire(cfg.source, cfg.buffer, program, cfg.detector.model,
                                        cfg.g2_pulses(), cfg.master_seed, gopt);
        counts = hbt.g2;
        triggers = hbt.n_triggers;
      }
      try {
        const auto g2 = analysis::g2_from_counts(counts, triggers);
        g2_csv += std::to_string(k) + ',' + format_number(g2.g2) + ',' + format_number(g2.std_error) + ',' +
                  format_number(g2.n_coincidences) + ',' + format_number(g2.n_a) + ',' +
                  format_number(g2.n_b) + ',' + format_number(g2.n_triggers) + '\n';
        json row = analysis::to_json(g2);
        row["k"] = k;
        g2_rows.push_back(row);
      } catch (const AnalysisError& e) {
        errors.push_back("g2 k=" + std::to_string(k) + ": " + e.what());
      }
    }
    files.write("fig2c_g2.csv", g2_csv);

    json fit_json;
    json summary = {{"k_list", ks}, {"master_seed", cfg.master_seed}};
    try {
      const auto series = analysis::make_peak_series(raw, cfg.analysis.normalization);
      files.write("fig2b_peaks.csv", render([&](std::ostream& os) { analysis::write_peaks_csv(os, series); }));
      const auto fit = analysis::fit_loss(series, {cfg.analysis.fit_min_k, cfg.analysis.weighted_fit});
      fit_json = analysis::to_json(fit);
      summary["slope_db_per_trip"] = fit.slope_db_per_trip;
    } catch (const AnalysisError& e) {
      fit_json = {{"error", e.what()}};
      errors.push_back(std::string("loss fit: ") + e.what());
    }
    fit_json["normalization"] = analysis::to_string(cfg.analysis.normalization);
    fit_json["fit_min_k"] = cfg.analysis.fit_min_k;
    fit_json["weighted"] = cfg.analysis.weighted_fit;
    fit_json["dead_time_corrected"] = cfg.analysis.dead_time_correction && cfg.detector.model.dead_time_ps > 0.0;
    fit_json["master_seed"] = cfg.master_seed;
    fit_json["config"] = provenance_config(cfg);
    files.write("fig2b_lossfit.json", fit_json.dump(2) + "\n");

    json manifest = base_manifest("sweep-storage", cfg, opt.jobs, started);
    manifest["k_list"] = ks;
    manifest["g2"] = g2_rows;
    manifest["warnings"] = issues_json(report);
    manifest["errors"] = errors;
    manifest["finished_utc"] = utc_now();
    files.write_manifest(manifest);
    summary["g2"] = g2_rows;
    print_summary(summary, opt.format, out);
    for (const auto& e : errors) err << "error: " << e.get<std::string>() << '\n';
    return static_cast<int>(kExitOk);
  });
}

int cmd_g2(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(opt.config);
    if (!opt.events) throw ConfigError("g2 needs --events");
    std::ifstream in(*opt.events);
    if (!in) throw ConfigError("cannot open " + opt.events->string());
    const auto events = detection::read_events_csv(in);
    std::vector<detection::DetectionEvent> a, b;
    for (const auto& e : events) (e.channel == detection::Channel::A ? a : b).push_back(e);
    const int k = opt.k_list.empty() ? cfg.control.hold_round_trips : opt.k_list.front();
    const auto gate = analysis::storage_gate(cfg.control.capture_time_ps, k, cfg.buffer,
                                             cfg.analysis.gate_half_width_ps);
    const auto g2 = analysis::estimate_g2(a, b, cfg.source.repetition_period_ps, gate,
                                          opt.triggers.value_or(cfg.n_pulses));
    if (opt.format == Format::Json) {
      json j = analysis::to_json(g2);
      j["k"] = k;
      out << j.dump(2) << '\n';
    } else {
      out << "k,g2,stderr,n_coincidences,n_a,n_b,n_triggers\n"
          << k << ',' << format_number(g2.g2) << ',' << format_number(g2.std_error) << ','
          << g2.n_coincidences << ',' << g2.n_a << ',' << g2.n_b << ',' << g2.n_triggers << '\n';
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_fit_loss(const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(opt.config);
    analysis::PeakSeries series;
    if (opt.peaks) {
      std::ifstream in(*opt.peaks);
      if (!in) throw ConfigError("cannot open " + opt.peaks->string());
      series = analysis::read_peaks_csv(in, cfg.analysis.normalization);
    } else {
      if (opt.inputs.empty()) throw ConfigError("fit-loss needs --peaks or at least one --hist");
      if (!opt.k_list.empty() && opt.k_list.size() != opt.inputs.size()) {
        throw ConfigError("--k must list one round-trip index per histogram");
      }
      static const std::regex k_pattern("_k([0-9]+)$");
      const double dead = cfg.detector.model.dead_time_ps;
      const bool correct = cfg.analysis.dead_time_correction && dead > 0.0;
      if (correct && cfg.detector.hbt) {
        err << "warning: dead-time correction of combined two-channel histograms is approximate\n";
      }
      std::vector<std::pair<int, double>> raw;
      for (std::size_t i = 0; i < opt.inputs.size(); ++i) {
        const fs::path& csv_path = opt.inputs[i];
        int k = 0;
        if (!opt.k_list.empty()) {
          k = opt.k_list[i];
        } else {
          std::smatch m;
          const std::string stem = csv_path.stem().string();
          if (!std::regex_search(stem, m, k_pattern)) {
            throw ConfigError("cannot infer round-trip index from " + csv_path.string() + "; pass --k");
          }
          k = std::stoi(m[1].str());
        }
        fs::path header_path = csv_path;
        header_path.replace_extension(".json");
        std::ifstream csv(csv_path), header(header_path);
        if (!csv) throw ConfigError("cannot open " + csv_path.string());
        if (!header) throw ConfigError("cannot open histogram header " + header_path.string());
        json header_json;
        try {
          header_json = json::parse(header);
        } catch (const json::parse_error& e) {
          throw ConfigError("bad histogram header " + header_path.string() + ": " + e.what());
        }
        const auto h = detection::read_histogram(csv, header_json, cfg.source.repetition_period_ps);
        const double centre = cfg.control.capture_time_ps + k * cfg.buffer.round_trip_time_ps;
        const double half = cfg.analysis.gate_half_width_ps;
        raw.emplace_back(k, correct ? analysis::gate_integral(analysis::correct_dead_time(h, dead), centre, half)
                                    : analysis::gate_integral(h, centre, half));
      }
      series = analysis::make_peak_series(std::move(raw), cfg.analysis.normalization);
    }
    const auto fit = analysis::fit_loss(series, {cfg.analysis.fit_min_k, cfg.analysis.weighted_fit});
    if (opt.format == Format::Json) {
      out << analysis::to_json(fit).dump(2) << '\n';
    } else {
      out << "slope_db_per_trip,intercept_db,residual_rms_db,n_points\n"
          << format_number(fit.slope_db_per_trip) << ',' << format_number(fit.intercept_db) << ','
          << format_number(fit.residual_rms_db) << ',' << fit.n_points << '\n';
    }
    for (const auto& w : fit.warnings) err << "warning: " << w << '\n';
    return static_cast<int>(kExitOk);
  });
}

}  // namespace spbuf::cli
