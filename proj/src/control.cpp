#include "spbuf/control.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include "spbuf/format.hpp"

namespace spbuf::control {

namespace {

constexpr double kLatticeTolerancePs = 1e-6;

bool on_lattice(double delay_ps, double round_trip_ps) {
  const double ratio = delay_ps / round_trip_ps;
  return std::abs(ratio - std::round(ratio)) * round_trip_ps <= kLatticeTolerancePs;
}

// Trapezoid envelope of one gate centred at `centre`, in units of v_pi.
double gate_envelope(double t, double centre, double window, double edge) {
  const double rise_mid = centre - 0.5 * window;
  const double fall_mid = centre + 0.5 * window;
  if (edge <= 0.0) return (t >= rise_mid && t < fall_mid) ? 1.0 : 0.0;
  const double rise = std::clamp((t - (rise_mid - 0.5 * edge)) / edge, 0.0, 1.0);
  const double fall = std::clamp(((fall_mid + 0.5 * edge) - t) / edge, 0.0, 1.0);
  return std::min(rise, fall);
}

std::vector<double> gate_centres(const GateSchedule& s) {
  if (s.hold_round_trips == 0) return {};
  return {s.capture_time_ps, s.release_time_ps};
}

double wrap_period(double t, double period) {
  double r = std::fmod(t, period);
  if (r < 0.0) r += period;
  return r;
}

}  // namespace

GateSchedule build_schedule(int hold_round_trips, const optics::BufferModel& buf,
                            const optics::SourceModel& src) {
  return build_schedule(hold_round_trips, buf, src, src.pulse_epoch_ps,
                        0.5 * buf.round_trip_time_ps);
}

GateSchedule build_schedule(int hold_round_trips, const optics::BufferModel& buf,
                            const optics::SourceModel& src, double capture_time_ps,
                            double gate_window_ps) {
  if (hold_round_trips < 0) throw ConfigError("hold_round_trips must be >= 0");
  if (hold_round_trips > buf.max_round_trips) {
    throw CapacityError("requested " + std::to_string(hold_round_trips) +
                        " round trips exceeds loop capacity of " +
                        std::to_string(buf.max_round_trips));
  }
  if (!(gate_window_ps > 0.0 && gate_window_ps < buf.round_trip_time_ps)) {
    throw ConfigError("gate window must lie in (0, round_trip_time_ps)");
  }
  const double hold_ps = hold_round_trips * buf.round_trip_time_ps;
  if (hold_ps + gate_window_ps >= src.repetition_period_ps) {
    throw CollisionError("storage of " + format_number(hold_ps) + " ps plus " +
                         format_number(gate_window_ps) +
                         " ps gate collides with the next pulse at " +
                         format_number(src.repetition_period_ps) + " ps");
  }
  GateSchedule s;
  s.capture_time_ps = capture_time_ps;
  s.release_time_ps = capture_time_ps + hold_ps;
  s.hold_round_trips = hold_round_trips;
  s.gate_window_ps = gate_window_ps;
  s.repetition_period_ps = src.repetition_period_ps;
  s.round_trip_time_ps = buf.round_trip_time_ps;
  return s;
}

double DriveWaveform::value_at(double t_ps) const {
  if (samples.empty()) return 0.0;
  if (t_ps <= samples.front().time_ps) return samples.front().volts;
  if (t_ps >= samples.back().time_ps) return samples.back().volts;
  const double pos = (t_ps - samples.front().time_ps) / sample_step_ps;
  auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= samples.size()) return samples.back().volts;
  const double frac = pos - static_cast<double>(i);
  return samples[i].volts + frac * (samples[i + 1].volts - samples[i].volts);
}

bool DriveWaveform::uniform_grid() const {
  if (!(sample_step_ps > 0.0)) return false;
  for (std::size_t i = 1; i < samples.size(); ++i) {
    const double dt = samples[i].time_ps - samples[i - 1].time_ps;
    if (std::abs(dt - sample_step_ps) > 1e-9 * sample_step_ps + 1e-12) return false;
  }
  return true;
}

bool DriveWaveform::within_range(double overshoot_tolerance) const {
  const double top = v_pi_volts * (1.0 + overshoot_tolerance);
  return std::all_of(samples.begin(), samples.end(),
                     [&](const WaveSample& s) { return s.volts >= 0.0 && s.volts <= top; });
}

DriveWaveform synthesize_waveform(const GateSchedule& sched, const optics::BufferModel& buf,
                                  double edge_time_ps, double sample_step_ps) {
  if (!(edge_time_ps > 0.0)) throw WaveformError("edge_time_ps must be > 0");
  if (!(sample_step_ps > 0.0) || sample_step_ps > 0.25 * edge_time_ps) {
    throw WaveformError("sample step must be in (0, edge_time/4]");
  }
  if (edge_time_ps >= sched.gate_window_ps) {
    throw WaveformError("edge time " + format_number(edge_time_ps) +
                        " ps is not shorter than the gate window " +
                        format_number(sched.gate_window_ps) + " ps; gate never reaches V_pi");
  }
  const double period = sched.repetition_period_ps;
  const double steps = period / sample_step_ps;
  if (std::abs(steps - std::round(steps)) > 1e-9) {
    throw WaveformError("sample step must divide the repetition period");
  }
  const auto n = static_cast<std::size_t>(std::llround(steps));
  const auto centres = gate_centres(sched);

  DriveWaveform w;
  w.v_pi_volts = buf.v_pi_volts;
  w.sample_step_ps = sample_step_ps;
  w.samples.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) * sample_step_ps;
    double level = 0.0;
    for (double c : centres) {
      level = std::max(level, gate_envelope(t, c, sched.gate_window_ps, edge_time_ps));
    }
    w.samples.push_back({t, level * buf.v_pi_volts});
  }
  return w;
}

DriveWaveform apply_bandwidth(const DriveWaveform& wave, double f3db_ghz) {
  if (!(f3db_ghz > 0.0)) throw ContractError("f3db must be > 0");
  if (!wave.uniform_grid()) throw ContractError("apply_bandwidth requires a uniform time grid");
  DriveWaveform out = wave;
  if (out.samples.empty()) return out;
  const double tau_ps = 1000.0 / (2.0 * std::numbers::pi * f3db_ghz);
  const double alpha = -std::expm1(-wave.sample_step_ps / tau_ps);
  double y = wave.samples.front().volts;
  for (auto& s : out.samples) {
    y += alpha * (s.volts - y);
    s.volts = y;
  }
  return out;
}

SwitchSplit switch_transmission(double volts, double v_pi_volts, double extinction_db) {
  if (!(v_pi_volts > 0.0)) throw ContractError("v_pi must be > 0");
  const double s = std::sin(std::numbers::pi * volts / (2.0 * v_pi_volts));
  const double ideal_cross = s * s;
  const double floor = std::isinf(extinction_db) ? 0.0 : std::pow(10.0, -extinction_db / 10.0);
  const double cross = floor + (1.0 - 2.0 * floor) * ideal_cross;
  return {cross, 1.0 - cross};
}

void to_json(nlohmann::json& j, const ProgramSettings& s) {
  j = nlohmann::json{{"capture_time_ps", s.capture_time_ps},
                     {"hold_round_trips", s.hold_round_trips},
                     {"gate_window_ps", s.gate_window_ps},
                     {"edge_time_ps", s.edge_time_ps},
                     {"f3db_ghz", s.f3db_ghz ? nlohmann::json(*s.f3db_ghz) : nlohmann::json()},
                     {"sample_step_ps", s.sample_step_ps}};
}

ProgramSettings program_settings_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("control program must be a JSON object");
  ProgramSettings s;
  for (const auto& [key, value] : j.items()) {
    auto number = [&](double& target) {
      if (!value.is_number()) throw ConfigError("control." + key + ": expected a number");
      target = value.get<double>();
    };
    if (key == "capture_time_ps") {
      number(s.capture_time_ps);
    } else if (key == "hold_round_trips") {
      if (!value.is_number_integer()) throw ConfigError("control.hold_round_trips: expected an integer");
      s.hold_round_trips = value.get<int>();
    } else if (key == "gate_window_ps") {
      number(s.gate_window_ps);
    } else if (key == "edge_time_ps") {
      number(s.edge_time_ps);
    } else if (key == "f3db_ghz") {
      if (value.is_null()) {
        s.f3db_ghz.reset();
      } else {
        double f = 0.0;
        number(f);
        s.f3db_ghz = f;
      }
    } else if (key == "sample_step_ps") {
      number(s.sample_step_ps);
    } else {
      throw ConfigError("control." + key + ": unknown key");
    }
  }
  return s;
}

ControlProgram ControlProgram::rectangular(const GateSchedule& sched,
                                           const optics::BufferModel& buf) {
  ControlProgram p;
  p.schedule_ = sched;
  p.v_pi_volts_ = buf.v_pi_volts;
  p.extinction_db_ = buf.switch_extinction_db;
  p.edge_time_ps_ = 0.0;
  return p;
}

ControlProgram ControlProgram::shaped(const GateSchedule& sched, const optics::BufferModel& buf,
                                      double edge_time_ps, std::optional<double> f3db_ghz,
                                      double sample_step_ps) {
  ControlProgram p = rectangular(sched, buf);
  p.edge_time_ps_ = edge_time_ps;
  p.f3db_ghz_ = f3db_ghz;
  p.sample_step_ps_ = sample_step_ps;
  DriveWaveform w = synthesize_waveform(sched, buf, edge_time_ps, sample_step_ps);
  if (f3db_ghz) w = apply_bandwidth(w, *f3db_ghz);
  p.waveform_ = std::move(w);
  return p;
}

ControlProgram ControlProgram::from_settings(const ProgramSettings& settings,
                                             const optics::BufferModel& buf,
                                             const optics::SourceModel& src) {
  const GateSchedule sched = build_schedule(settings.hold_round_trips, buf, src,
                                            settings.capture_time_ps, settings.gate_window_ps);
  if (settings.edge_time_ps == 0.0) {
    ControlProgram p = rectangular(sched, buf);
    p.f3db_ghz_ = settings.f3db_ghz;
    p.sample_step_ps_ = settings.sample_step_ps;
    return p;
  }
  return shaped(sched, buf, settings.edge_time_ps,
                settings.f3db_ghz.value_or(buf.eo_bandwidth_ghz), settings.sample_step_ps);
}

ProgramSettings ControlProgram::settings() const {
  ProgramSettings s;
  s.capture_time_ps = schedule_.capture_time_ps;
  s.hold_round_trips = schedule_.hold_round_trips;
  s.gate_window_ps = schedule_.gate_window_ps;
  s.edge_time_ps = edge_time_ps_;
  s.f3db_ghz = f3db_ghz_;
  s.sample_step_ps = sample_step_ps_;
  return s;
}

double ControlProgram::drive_at(double t_ps) const {
  const double t = wrap_period(t_ps, schedule_.repetition_period_ps);
  if (waveform_) return waveform_->value_at(t);
  for (double c : gate_centres(schedule_)) {
    if (gate_envelope(t, c, schedule_.gate_window_ps, 0.0) > 0.0) return v_pi_volts_;
  }
  return 0.0;
}

double ControlProgram::cross_fraction(double t_ps) const {
  return switch_transmission(drive_at(t_ps), v_pi_volts_, extinction_db_).cross;
}

DriveWaveform ControlProgram::sampled(double sample_step_ps) const {
  if (waveform_) return *waveform_;
  DriveWaveform w;
  w.v_pi_volts = v_pi_volts_;
  w.sample_step_ps = sample_step_ps;
  const auto n = static_cast<std::size_t>(std::llround(span_ps() / sample_step_ps));
  w.samples.reserve(n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) * sample_step_ps;
    w.samples.push_back({t, i == n ? drive_at(0.0) : drive_at(t)});
  }
  return w;
}

ValidationReport validate_schedule(const GateSchedule& s, double edge_time_ps,
                                   const optics::SourceModel& src,
                                   const optics::BufferModel& buf) {
  ValidationReport r;
  const double trt = buf.round_trip_time_ps;
  if (s.hold_round_trips < 0) {
    r.add(IssueKind::Physics, "control.hold_round_trips", "hold_round_trips must be >= 0");
  }
  if (s.hold_round_trips > buf.max_round_trips) {
    r.add(IssueKind::Physics, "control.hold_round_trips",
          "capacity exceeded: " + std::to_string(s.hold_round_trips) + " > max_round_trips " +
              std::to_string(buf.max_round_trips));
  }
  if (!(s.gate_window_ps > 0.0)) {
    r.add(IssueKind::Physics, "control.gate_window_ps", "gate window must be > 0");
  } else if (s.gate_window_ps >= trt) {
    r.add(IssueKind::Physics, "control.gate_window_ps",
          "window exceeds round trip: " + format_number(s.gate_window_ps) + " ps >= " +
              format_number(trt) + " ps");
  }
  if (s.repetition_period_ps != src.repetition_period_ps) {
    r.add(IssueKind::Physics, "control", "program period does not match source repetition period");
  }
  if (s.round_trip_time_ps != 0.0 && s.round_trip_time_ps != trt) {
    r.add(IssueKind::Physics, "control", "program round trip does not match buffer round trip");
  }
  const double delay = s.release_time_ps - s.capture_time_ps;
  if (!on_lattice(delay, trt) || delay < 0.0) {
    r.add(IssueKind::Physics, "control.release",
          "off-lattice release: release - capture = " + format_number(delay) +
              " ps is not a multiple of " + format_number(trt) + " ps");
  } else if (std::llround(delay / trt) != s.hold_round_trips) {
    r.add(IssueKind::Physics, "control.release",
          "release time does not match hold_round_trips");
  }
  if (delay + s.gate_window_ps >= src.repetition_period_ps) {
    r.add(IssueKind::Physics, "control.hold_round_trips",
          "collision with next pulse: stored photon still circulating at the next capture");
  }
  if (edge_time_ps < 0.0) {
    r.add(IssueKind::Physics, "control.edge_time_ps", "edge time must be >= 0");
  } else if (edge_time_ps > 0.0 && edge_time_ps >= s.gate_window_ps) {
    r.add(IssueKind::Physics, "control.edge_time_ps",
          "edge slower than window: " + format_number(edge_time_ps) + " ps >= " +
              format_number(s.gate_window_ps) + " ps");
  }
  if (s.hold_round_trips > 0) {
    const double half = 0.5 * (s.gate_window_ps + edge_time_ps);
    if (s.capture_time_ps - half < 0.0 || s.release_time_ps + half > src.repetition_period_ps) {
      r.add(IssueKind::Physics, "control.capture_time_ps",
            "gate outside repetition period: gates must fit inside [0, period)");
    }
    if (std::abs(s.capture_time_ps - src.pulse_epoch_ps) >= 0.5 * s.gate_window_ps) {
      r.add(IssueKind::Warning, "control.capture_time_ps",
            "capture gate does not cover the pulse arrival time; nothing will be stored");
    }
  }
  return r;
}

ValidationReport validate_program(const ControlProgram& program, const optics::SourceModel& src,
                                  const optics::BufferModel& buf) {
  return validate_schedule(program.schedule(), program.edge_time_ps(), src, buf);
}

ValidationReport validate_program(const ProgramSettings& settings,
                                  const optics::SourceModel& src,
                                  const optics::BufferModel& buf) {
  GateSchedule s;
  s.capture_time_ps = settings.capture_time_ps;
  s.hold_round_trips = settings.hold_round_trips;
  s.release_time_ps = settings.capture_time_ps + settings.hold_round_trips * buf.round_trip_time_ps;
  s.gate_window_ps = settings.gate_window_ps;
  s.repetition_period_ps = src.repetition_period_ps;
  s.round_trip_time_ps = buf.round_trip_time_ps;
  ValidationReport r = validate_schedule(s, settings.edge_time_ps, src, buf);
  if (settings.edge_time_ps > 0.0) {
    if (!(settings.sample_step_ps > 0.0) || settings.sample_step_ps > 0.25 * settings.edge_time_ps) {
      r.add(IssueKind::Physics, "control.sample_step_ps", "sample step must be in (0, edge_time/4]");
    } else {
      const double steps = src.repetition_period_ps / settings.sample_step_ps;
      if (std::abs(steps - std::round(steps)) > 1e-9) {
        r.add(IssueKind::Physics, "control.sample_step_ps",
              "sample step must divide the repetition period");
      }
    }
  }
  if (settings.f3db_ghz && !(*settings.f3db_ghz > 0.0)) {
    r.add(IssueKind::Config, "control.f3db_ghz", "must be > 0 or null");
  }
  return r;
}

void write_waveform_csv(std::ostream& os, const DriveWaveform& wave) {
  os << "time_ps,volts\n";
  for (const auto& s : wave.samples) {
    os << format_number(s.time_ps) << ',' << format_number(s.volts) << '\n';
  }
}

DriveWaveform read_waveform_csv(std::istream& is, double v_pi_volts) {
  DriveWaveform w;
  w.v_pi_volts = v_pi_volts;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line.rfind("time_ps", 0) == 0) continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw ConfigError("waveform CSV rows need exactly two columns");
    w.samples.push_back({parse_double(f[0], "time_ps"), parse_double(f[1], "volts")});
  }
  if (w.samples.size() >= 2) w.sample_step_ps = w.samples[1].time_ps - w.samples[0].time_ps;
  return w;
}

}  // namespace spbuf::control
