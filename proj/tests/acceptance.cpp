// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "spbuf/analysis.hpp"
#include "spbuf/commands.hpp"
#include "spbuf/config.hpp"
#include "spbuf/control.hpp"
#include "spbuf/detection.hpp"
#include "spbuf/optics.hpp"
#include "spbuf/pipeline.hpp"

using namespace spbuf;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << std::fixed << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

unsigned worker_count() { return std::max(1U, std::thread::hardware_concurrency()); }

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("spbuf_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

fs::path write_config(const std::string& name, const json& j) {
  const auto p = workdir() / name;
  std::ofstream(p) << j.dump(2);
  return p;
}

detection::Histogram load_histogram(const fs::path& csv_path, double period) {
  fs::path header = csv_path;
  header.replace_extension(".json");
  std::ifstream csv(csv_path);
  return detection::read_histogram(csv, json::parse(slurp(header)), period);
}

/// Locates the strongest peak anywhere in the window (sliding +-half sum),
/// then returns the centroid of the counts around it.
double locate_peak(const detection::Histogram& h, double half_width_ps) {
  const auto n = h.counts.size();
  const auto w = static_cast<std::size_t>(std::llround(half_width_ps / h.bin_width_ps));
  std::uint64_t run = 0;
  for (std::size_t i = 0; i <= 2 * w; ++i) run += h.counts[i % n];
  std::uint64_t best = run;
  std::size_t best_centre = w;
  for (std::size_t c = w + 1; c < n + w; ++c) {
    run += h.counts[(c + w) % n];
    run -= h.counts[(c - w - 1) % n];
    if (run > best) {
      best = run;
      best_centre = c % n;
    }
  }
  const double coarse = h.bin_centre(best_centre);
  const double fine = analysis::measure_peak(h, coarse, half_width_ps).centroid_ps;
  return analysis::measure_peak(h, fine, half_width_ps).centroid_ps;
}

control::ControlProgram rect(int n, const optics::BufferModel& buf, const optics::SourceModel& src) {
  return control::ControlProgram::rectangular(control::build_schedule(n, buf, src), buf);
}

// Shared by the loss-slope and lattice criteria.
const fs::path& default_sweep() {
  static const fs::path out = [] {
    cli::CommandOptions opt;
    opt.config = write_config("sweep.json", json::object());
    opt.out = workdir() / "sweep";
    opt.jobs = worker_count();
    std::ostringstream sink;
    const int code = cli::cmd_sweep_storage(opt, sink, std::cerr);
    if (code != 0) throw std::runtime_error("default sweep failed with exit code " + std::to_string(code));
    return *opt.out;
  }();
  return out;
}

Verdict loss_slope() {
  const auto fit = json::parse(slurp(default_sweep() / "fig2b_lossfit.json"));
  const double slope = fit.at("slope_db_per_trip").get<double>();
  return {std::abs(slope - 0.74) <= 0.02,
          "slope " + fmt(slope) + " dB/trip over k=1..5 at 1e6 pulses per k (target 0.74 +- 0.02)"};
}

Verdict peak_lattice() {
  const auto cfg = cli::parse_config("{}");
  double worst = 0.0;
  std::string where;
  for (int k = 1; k <= 5; ++k) {
    const auto h = load_histogram(default_sweep() / ("fig2a_hist_k" + std::to_string(k) + ".csv"),
                                  cfg.source.repetition_period_ps);
    const double expected = cfg.control.capture_time_ps + k * cfg.buffer.round_trip_time_ps;
    const double dev = std::abs(locate_peak(h, cfg.analysis.gate_half_width_ps) - expected);
    if (dev >= worst) {
      worst = dev;
      where = "k=" + std::to_string(k);
    }
  }
  return {worst <= cfg.analysis.bin_width_ps,
          "largest |centre - (capture + k*100 ps)| = " + fmt(worst, 3) + " ps at " + where +
              " (limit 1 bin = " + fmt(cfg.analysis.bin_width_ps, 1) + " ps)"};
}

Verdict maximum_storage() {
  cli::CommandOptions opt;
  opt.config = write_config("n14.json", json{{"control", {{"hold_round_trips", 14}}}, {"dump_events", false}});
  opt.out = workdir() / "n14";
  opt.jobs = worker_count();
  std::ostringstream sink;
  if (cli::cmd_simulate(opt, sink, std::cerr) != 0) return {false, "simulate failed"};
  const auto h = load_histogram(*opt.out / "histogram.csv", 10000.0);
  const double centre = locate_peak(h, 40.0);
  const double delay = centre - 1000.0;
  const double signal = analysis::gate_integral(h, 2400.0, 40.0);
  double floor_counts = 0.0;
  for (std::size_t i = 5000; i < 9000; ++i) floor_counts += static_cast<double>(h.counts[i]);
  const double background = floor_counts / 4000.0 * 80.0;
  const double significance = (signal - background) / std::sqrt(std::max(background, 1.0));
  const bool pass = std::abs(delay - 1400.0) <= 1.0 && signal >= background + 5.0 * std::sqrt(std::max(background, 1.0));
  return {pass, "delay " + fmt(delay, 2) + " ps, peak " + fmt(signal, 0) + " counts vs dark floor " +
                    fmt(background, 2) + " in the gate (" + fmt(significance, 0) + " sigma)"};
}

Verdict g2_flatness() {
  const optics::BufferModel buf;
  const optics::SourceModel src;
  const detection::DetectorModel det;
  const std::map<int, std::uint64_t> pulses{{1, 100'000'000}, {5, 400'000'000}, {14, 4'000'000'000ULL}};
  bool pass = true;
  std::string detail;
  for (const auto& [n, count] : pulses) {
    cli::AcquisitionOptions opt;
    opt.hbt = true;
    opt.histogram = {10000.0, 1.0, 0.0, 10000.0};
    opt.g2_gate = analysis::storage_gate(1000.0, n, buf, 40.0);
    opt.jobs = worker_count();
    const auto acq = cli::acquire(src, buf, rect(n, buf, src), det, count, 1, opt);
    const auto g = analysis::g2_from_counts(acq.g2, acq.n_triggers);
    const double dev = std::abs(g.g2 - 1.0);
    pass = pass && dev <= 3.0 * g.std_error && dev < 0.05;
    detail += "N=" + std::to_string(n) + ": " + fmt(g.g2) + " +- " + fmt(g.std_error) + " (" +
              std::to_string(g.n_coincidences) + " cc, " + fmt(static_cast<double>(count), 0) + " pulses); ";
  }
  return {pass, detail + "need |g2-1| <= 3 stderr and < 0.05"};
}

Verdict antibunching() {
  optics::BufferModel buf;
  optics::SourceModel src;
  src.kind = optics::SourceKind::SingleFock;
  src.fock_n = 1;
  cli::AcquisitionOptions opt;
  opt.hbt = true;
  opt.histogram = {10000.0, 1.0, 0.0, 10000.0};
  opt.g2_gate = analysis::storage_gate(1000.0, 5, buf, 40.0);
  opt.jobs = worker_count();

  detection::DetectorModel no_dark;
  no_dark.dark_rate_hz = 0.0;
  const auto one = cli::acquire(src, buf, rect(5, buf, src), no_dark, 1'000'000, 1, opt);
  const auto g1 = analysis::g2_from_counts(one.g2, one.n_triggers);

  optics::BufferModel lossless = buf;
  lossless.round_trip_loss_db = lossless.input_coupling_loss_db = lossless.output_coupling_loss_db = 0.0;
  detection::DetectorModel ideal;
  ideal.efficiency = 1.0;
  ideal.jitter_sigma_ps = 0.0;
  ideal.dark_rate_hz = 0.0;
  ideal.dead_time_ps = 0.0;
  src.fock_n = 2;
  const auto two = cli::acquire(src, lossless, rect(5, lossless, src), ideal, 1'000'000, 1, opt);
  const auto g2 = analysis::g2_from_counts(two.g2, two.n_triggers);

  return {g1.g2 == 0.0 && std::abs(g2.g2 - 0.5) <= 0.01,
          "Fock 1: g2 = " + fmt(g1.g2, 6) + " (" + std::to_string(g1.n_a + g1.n_b) +
              " singles); Fock 2: g2 = " + fmt(g2.g2) + " (target 0.5 +- 0.01)"};
}

Verdict oracle_agreement() {
  const optics::BufferModel buf;
  detection::DetectorModel det;
  det.dead_time_ps = 0.0;
  const detection::HistogramSpec spec{10000.0, 1.0, 0.0, 10000.0};
  const std::uint64_t n_pulses = 1'000'000;
  bool pass = true;
  double worst = 0.0;
  std::string worst_at;
  int peaks = 0;
  for (double mu : {0.05, 0.1, 0.5}) {
    for (int n : {1, 5, 14}) {
      optics::SourceModel src;
      src.mean_photon_number = mu;
      const auto prog = rect(n, buf, src);
      const auto expect = analysis::expected_histogram(src, buf, prog, det, n_pulses, spec);
      cli::AcquisitionOptions opt;
      opt.histogram = spec;
      opt.jobs = worker_count();
      const auto acq = cli::acquire(src, buf, prog, det, n_pulses, 1, opt);
      for (int k = 0; k <= buf.max_round_trips; ++k) {
        const double centre = 1000.0 + 100.0 * k;
        const double e = analysis::gate_integral(expect, centre, 40.0);
        if (e < 1.0) continue;
        ++peaks;
        const double o = analysis::gate_integral(acq.hist_a, centre, 40.0);
        const double p = e / static_cast<double>(n_pulses);
        const double se = std::sqrt(static_cast<double>(n_pulses) * p * (1.0 - p));
        const double z = std::abs(o - e) / se;
        pass = pass && z <= 3.0;
        if (z >= worst) {
          worst = z;
          worst_at = "mu=" + fmt(mu, 2) + " N=" + std::to_string(n) + " k=" + std::to_string(k);
        }
      }
    }
  }
  return {pass && peaks >= 9, std::to_string(peaks) + " peaks, largest deviation " + fmt(worst, 2) +
                                  " binomial SE at " + worst_at + " (limit 3)"};
}

Verdict poisson_closure() {
  optics::SourceModel src;
  src.mean_photon_number = 0.5;
  const std::uint64_t n_pulses = 1'000'000;
  bool pass = true;
  std::string detail;
  for (double loss : {0.3, 0.74, 1.5}) {
    optics::BufferModel buf;
    buf.round_trip_loss_db = loss;
    const auto run = optics::run_experiment(src, buf, rect(5, buf, src), n_pulses, 1, worker_count());
    std::vector<std::uint64_t> per_pulse(n_pulses, 0);
    for (const auto& r : run.records) ++per_pulse[r.origin_pulse_index];
    std::vector<std::uint64_t> freq(16, 0);
    for (auto c : per_pulse) ++freq[std::min<std::uint64_t>(c, freq.size() - 1)];
    const double eta = optics::db_to_transmission(buf.input_coupling_loss_db) *
                       std::pow(optics::db_to_transmission(loss), 5) *
                       optics::db_to_transmission(buf.output_coupling_loss_db);
    const auto chi = analysis::poisson_chi_square(freq, src.mean_photon_number * eta);
    pass = pass && chi.p_value >= 0.01;
    detail += fmt(loss, 2) + " dB: chi2=" + fmt(chi.statistic, 2) + " dof=" + std::to_string(chi.dof) +
              " p=" + fmt(chi.p_value, 3) + "; ";
  }
  return {pass, detail + "reject if p < 0.01"};
}

Verdict bandwidth_rise() {
  control::DriveWaveform step;
  step.v_pi_volts = 1.0;
  step.sample_step_ps = 0.5;
  for (int i = 0; i <= 400; ++i) step.samples.push_back({i * 0.5, i * 0.5 >= 50.0 ? 1.0 : 0.0});
  const auto out = control::apply_bandwidth(step, 40.0);
  auto crossing = [&](double level) {
    for (std::size_t i = 1; i < out.samples.size(); ++i) {
      const auto& a = out.samples[i - 1];
      const auto& b = out.samples[i];
      if (a.volts < level && b.volts >= level) {
        return a.time_ps + (level - a.volts) / (b.volts - a.volts) * (b.time_ps - a.time_ps);
      }
    }
    return std::nan("");
  };
  const double rise = crossing(0.9) - crossing(0.1);
  const double target = 8.742478814151497;
  return {std::abs(rise - target) <= 0.05 * target,
          "10-90% rise " + fmt(rise, 3) + " ps vs " + fmt(target, 3) + " ps (+-5%)"};
}

Verdict determinism() {
  const json cfg{{"n_pulses", 300000},
                 {"chunk_pulses", 8192},
                 {"source", {{"mean_photon_number", 0.5}}},
                 {"detector", {{"hbt", true}}},
                 {"dump_records", true}};
  const auto path = write_config("det.json", cfg);
  auto run = [&](const std::string& name, unsigned jobs, bool sweep) {
    cli::CommandOptions opt;
    opt.config = path;
    opt.out = workdir() / name;
    opt.jobs = jobs;
    opt.k_list = {1, 3, 14};
    std::ostringstream sink;
    const int code = sweep ? cli::cmd_sweep_storage(opt, sink, std::cerr) : cli::cmd_simulate(opt, sink, std::cerr);
    return code == 0;
  };
  bool ok = run("sim1", 1, false) && run("sim1b", 1, false) && run("sim4", 4, false) &&
            run("sweep1", 1, true) && run("sweep3", 3, true);
  int compared = 0;
  for (const auto& [a, others] : std::map<std::string, std::vector<std::string>>{{"sim1", {"sim1b", "sim4"}}, {"sweep1", {"sweep3"}}}) {
    for (const auto& entry : fs::directory_iterator(workdir() / a)) {
      const auto file = entry.path().filename();
      if (file == "manifest.json") continue;
      const auto bytes = slurp(entry.path());
      for (const auto& b : others) {
        ok = ok && fs::exists(workdir() / b / file) && slurp(workdir() / b / file) == bytes;
        ++compared;
      }
    }
  }
  return {ok && compared > 10, std::to_string(compared) + " file pairs byte-compared (simulate jobs 1/1/4, sweep jobs 1/3)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"loss_slope", loss_slope},
      {"peak_lattice", peak_lattice},
      {"maximum_storage", maximum_storage},
      {"g2_flatness", g2_flatness},
      {"antibunching", antibunching},
      {"oracle_agreement", oracle_agreement},
      {"poisson_closure", poisson_closure},
      {"bandwidth_rise_time", bandwidth_rise},
      {"determinism", determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS " : "FAIL ") << std::left << std::setw(20) << name << v.detail << " ["
              << fmt(secs, 1) << " s]" << std::endl;
  }
  fs::remove_all(workdir());
  std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed") << '\n';
  return failures == 0 ? 0 : 1;
}
