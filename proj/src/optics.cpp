#include "spbuf/optics.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>

#include "spbuf/control.hpp"
#include "spbuf/format.hpp"
#include "spbuf/parallel.hpp"

namespace spbuf::optics {

namespace {

constexpr std::uint64_t kRunChunkPulses = 1U << 16;
constexpr double kMaxMeanPhotons = 100.0;

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

}  // namespace

std::string_view to_string(SourceKind kind) {
  return kind == SourceKind::WeakCoherent ? "weak_coherent" : "single_fock";
}

std::string_view to_string(PathTag tag) {
  switch (tag) {
    case PathTag::Stored: return "stored";
    case PathTag::Leaked: return "leaked";
    case PathTag::DirectPass: return "direct_pass";
  }
  return "unknown";
}

double SourceModel::mean_photons() const {
  return kind == SourceKind::WeakCoherent ? mean_photon_number : static_cast<double>(fock_n);
}

ValidationReport SourceModel::check() const {
  ValidationReport r;
  if (!(std::isfinite(repetition_period_ps) && repetition_period_ps > 0.0)) {
    r.add(IssueKind::Config, "source.repetition_period_ps", "must be > 0");
  }
  if (!finite_nonneg(mean_photon_number)) {
    r.add(IssueKind::Config, "source.mean_photon_number", "must be >= 0");
  } else if (mean_photon_number > kMaxMeanPhotons) {
    r.add(IssueKind::Config, "source.mean_photon_number", "must be <= 100");
  } else if (kind == SourceKind::WeakCoherent && mean_photon_number > 1.0) {
    r.add(IssueKind::Warning, "source.mean_photon_number",
          "mean photon number above 1 is outside the weak-coherent regime");
  }
  if (fock_n < 0) r.add(IssueKind::Config, "source.fock_n", "must be >= 0");
  if (!std::isfinite(pulse_epoch_ps) || pulse_epoch_ps < 0.0 ||
      (std::isfinite(repetition_period_ps) && pulse_epoch_ps >= repetition_period_ps)) {
    r.add(IssueKind::Config, "source.pulse_epoch_ps", "must lie in [0, repetition_period_ps)");
  }
  return r;
}

ValidationReport BufferModel::check() const {
  ValidationReport r;
  if (!(std::isfinite(round_trip_time_ps) && round_trip_time_ps > 0.0)) {
    r.add(IssueKind::Config, "buffer.round_trip_time_ps", "must be > 0");
  }
  if (!finite_nonneg(round_trip_loss_db)) {
    r.add(IssueKind::Config, "buffer.round_trip_loss_db", "must be >= 0");
  }
  if (!finite_nonneg(input_coupling_loss_db)) {
    r.add(IssueKind::Config, "buffer.input_coupling_loss_db", "must be >= 0");
  }
  if (!finite_nonneg(output_coupling_loss_db)) {
    r.add(IssueKind::Config, "buffer.output_coupling_loss_db", "must be >= 0");
  }
  if (!finite_nonneg(insertion_loss_budget_db)) {
    r.add(IssueKind::Config, "buffer.insertion_loss_budget_db", "must be >= 0");
  }
  if (!(std::isfinite(v_pi_volts) && v_pi_volts > 0.0)) {
    r.add(IssueKind::Config, "buffer.v_pi_volts", "must be > 0");
  }
  if (std::isnan(switch_extinction_db) || switch_extinction_db < 0.0) {
    r.add(IssueKind::Config, "buffer.switch_extinction_db", "must be >= 0 (null for ideal)");
  }
  if (!(std::isfinite(eo_bandwidth_ghz) && eo_bandwidth_ghz > 0.0)) {
    r.add(IssueKind::Config, "buffer.eo_bandwidth_ghz", "must be > 0");
  }
  if (max_round_trips < 0) r.add(IssueKind::Config, "buffer.max_round_trips", "must be >= 0");
  if (finite_nonneg(input_coupling_loss_db) && finite_nonneg(output_coupling_loss_db) &&
      input_coupling_loss_db + output_coupling_loss_db > insertion_loss_budget_db) {
    r.add(IssueKind::Physics, "buffer.input_coupling_loss_db",
          "insertion loss budget violation: coupling losses " +
              format_number(input_coupling_loss_db + output_coupling_loss_db) + " dB exceed " +
              format_number(insertion_loss_budget_db) + " dB budget");
  }
  return r;
}

ValidationReport check_compatible(const SourceModel& src, const BufferModel& buf) {
  ValidationReport r;
  if (buf.round_trip_time_ps >= src.repetition_period_ps) {
    r.add(IssueKind::Physics, "buffer.round_trip_time_ps",
          "round trip time must be shorter than the source repetition period");
  }
  return r;
}

double db_to_transmission(double loss_db) {
  if (!std::isfinite(loss_db) || loss_db < 0.0) {
    throw std::domain_error("loss in dB must be finite and >= 0, got " + format_number(loss_db));
  }
  return std::pow(10.0, -loss_db / 10.0);
}

int sample_pulse_photons(const SourceModel& src, PulseRng& rng) {
  if (src.kind == SourceKind::SingleFock) return src.fock_n;
  const double mu = src.mean_photon_number;
  if (mu <= 0.0) return 0;
  // Inversion of the Poisson CDF from a single uniform.
  const double u = uniform01(rng);
  double p = std::exp(-mu);
  double cdf = p;
  int n = 0;
  while (u >= cdf && p > 0.0) {
    ++n;
    p *= mu / n;
    cdf += p;
  }
  return n;
}

namespace {

// Everything propagate_photon needs, evaluated once for a fixed entry time.
struct RouteTable {
  double entry_time_ps = 0.0;
  double round_trip_time_ps = 0.0;
  double t_in = 1.0;
  double t_rt = 1.0;
  double t_out = 1.0;
  int hold = 0;
  std::vector<double> cross;  // cross fraction at the m-th switch encounter, m = 0..max
};

RouteTable make_route_table(const BufferModel& buf, const control::ControlProgram& program,
                            double entry_time_ps) {
  if (!(entry_time_ps >= 0.0 && entry_time_ps < program.span_ps())) {
    throw ContractError("photon entry time " + format_number(entry_time_ps) +
                        " ps lies outside the control program span [0, " +
                        format_number(program.span_ps()) + ")");
  }
  RouteTable t;
  t.entry_time_ps = entry_time_ps;
  t.round_trip_time_ps = buf.round_trip_time_ps;
  t.t_in = db_to_transmission(buf.input_coupling_loss_db);
  t.t_rt = db_to_transmission(buf.round_trip_loss_db);
  t.t_out = db_to_transmission(buf.output_coupling_loss_db);
  t.hold = program.schedule().hold_round_trips;
  t.cross.reserve(static_cast<std::size_t>(buf.max_round_trips) + 1);
  for (int m = 0; m <= buf.max_round_trips; ++m) {
    t.cross.push_back(program.cross_fraction(entry_time_ps + m * buf.round_trip_time_ps));
  }
  return t;
}

PhotonFate propagate(const RouteTable& route, PulseRng& rng) {
  if (!bernoulli(rng, route.t_in)) return Lost{LossPoint::InputCoupling, 0};

  if (!bernoulli(rng, route.cross[0])) {
    if (!bernoulli(rng, route.t_out)) return Lost{LossPoint::OutputCoupling, 0};
    return PhotonRecord{0, route.entry_time_ps, 0, PathTag::DirectPass};
  }

  const int max_trips = static_cast<int>(route.cross.size()) - 1;
  for (int m = 1; m <= max_trips; ++m) {
    if (!bernoulli(rng, route.t_rt)) return Lost{LossPoint::Loop, m - 1};
    if (bernoulli(rng, route.cross[m])) {
      if (!bernoulli(rng, route.t_out)) return Lost{LossPoint::OutputCoupling, m};
      const double t = route.entry_time_ps + m * route.round_trip_time_ps;
      return PhotonRecord{0, t, m, m == route.hold ? PathTag::Stored : PathTag::Leaked};
    }
  }
  return Lost{LossPoint::Overflow, max_trips};
}

}  // namespace

PhotonFate propagate_photon(const BufferModel& buf, const control::ControlProgram& program,
                            double entry_time_ps, PulseRng& rng) {
  return propagate(make_route_table(buf, program, entry_time_ps), rng);
}

void LossTally::merge(const LossTally& other) {
  photons_emitted += other.photons_emitted;
  exited += other.exited;
  lost_input += other.lost_input;
  lost_loop += other.lost_loop;
  lost_output += other.lost_output;
  overflow += other.overflow;
}

ExperimentRun run_pulses(const SourceModel& src, const BufferModel& buf,
                         const control::ControlProgram& program, std::uint64_t first_pulse,
                         std::uint64_t n_pulses, std::uint64_t seed) {
  if (program.span_ps() != src.repetition_period_ps) {
    throw ConfigError("control program period " + format_number(program.span_ps()) +
                      " ps does not match source repetition period " +
                      format_number(src.repetition_period_ps) + " ps");
  }
  ExperimentRun run;
  const double period = src.repetition_period_ps;
  const double epoch = src.pulse_epoch_ps;
  const RouteTable route = make_route_table(buf, program, epoch);
  for (std::uint64_t j = first_pulse; j < first_pulse + n_pulses; ++j) {
    PulseRng rng = pulse_stream(seed, j);
    const int n = sample_pulse_photons(src, rng);
    const double offset = static_cast<double>(j) * period;
    for (int p = 0; p < n; ++p) {
      ++run.tally.photons_emitted;
      auto fate = propagate(route, rng);
      if (auto* rec = std::get_if<PhotonRecord>(&fate)) {
        rec->origin_pulse_index = j;
        rec->exit_time_ps += offset;
        run.records.push_back(*rec);
        ++run.tally.exited;
      } else {
        switch (std::get<Lost>(fate).where) {
          case LossPoint::InputCoupling: ++run.tally.lost_input; break;
          case LossPoint::Loop: ++run.tally.lost_loop; break;
          case LossPoint::OutputCoupling: ++run.tally.lost_output; break;
          case LossPoint::Overflow: ++run.tally.overflow; break;
        }
      }
    }
  }
  return run;
}

ExperimentRun run_experiment(const SourceModel& src, const BufferModel& buf,
                             const control::ControlProgram& program, std::uint64_t n_pulses,
                             std::uint64_t seed, unsigned jobs) {
  if (n_pulses < 1) throw ConfigError("n_pulses must be >= 1");
  const std::uint64_t n_chunks = (n_pulses + kRunChunkPulses - 1) / kRunChunkPulses;
  std::vector<ExperimentRun> parts(n_chunks);
  parallel_for(n_chunks, jobs, [&](std::size_t c) {
    const std::uint64_t begin = c * kRunChunkPulses;
    const std::uint64_t count = std::min(kRunChunkPulses, n_pulses - begin);
    parts[c] = run_pulses(src, buf, program, begin, count, seed);
  });
  ExperimentRun out;
  std::size_t total = 0;
  for (const auto& p : parts) total += p.records.size();
  out.records.reserve(total);
  for (auto& p : parts) {
    out.records.insert(out.records.end(), p.records.begin(), p.records.end());
    out.tally.merge(p.tally);
  }
  return out;
}

void write_records_csv(std::ostream& os, std::span<const PhotonRecord> records) {
  os << "pulse_index,exit_time_ps,round_trips,path_tag\n";
  for (const auto& r : records) {
    os << r.origin_pulse_index << ',' << format_number(r.exit_time_ps) << ','
       << r.round_trips_completed << ',' << to_string(r.path_tag) << '\n';
  }
}

}  // namespace spbuf::optics
