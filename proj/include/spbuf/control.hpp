#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <json.hpp>

#include "spbuf/errors.hpp"
#include "spbuf/optics.hpp"

namespace spbuf::control {

// Switch convention: 0 V is bar (the loop keeps circulating, the input passes
// straight to the output), V_pi is cross (input enters the loop, loop content
// leaves to the output). A capture gate is centred on the pulse arrival and a
// release gate N round trips later. N = 0 means no gate at all, so the photon
// passes straight through.

struct GateSchedule {
  double capture_time_ps = 0.0;
  double release_time_ps = 0.0;
  int hold_round_trips = 0;
  double gate_window_ps = 0.0;
  double repetition_period_ps = 0.0;
  double round_trip_time_ps = 0.0;
};

/// Schedule holding N round trips, capture aligned with the source epoch and
/// a gate window of half a round trip. Throws CapacityError / CollisionError.
GateSchedule build_schedule(int hold_round_trips, const optics::BufferModel& buf,
                            const optics::SourceModel& src);
GateSchedule build_schedule(int hold_round_trips, const optics::BufferModel& buf,
                            const optics::SourceModel& src, double capture_time_ps,
                            double gate_window_ps);

struct WaveSample {
  double time_ps;
  double volts;
};

struct DriveWaveform {
  std::vector<WaveSample> samples;
  double v_pi_volts = 0.0;
  double sample_step_ps = 0.0;

  /// Linear interpolation; clamps to the end values outside the grid.
  [[nodiscard]] double value_at(double t_ps) const;
  [[nodiscard]] bool uniform_grid() const;
  /// Checks 0 <= v <= v_pi * (1 + overshoot_tolerance).
  [[nodiscard]] bool within_range(double overshoot_tolerance = 0.05) const;
};

inline constexpr double kDefaultSampleStepPs = 0.5;

/// Trapezoidal gates on [0, period]: each ideal edge becomes a linear ramp of
/// `edge_time_ps` centred on it, so the plateau lasts gate_window - edge_time.
DriveWaveform synthesize_waveform(const GateSchedule& sched, const optics::BufferModel& buf,
                                  double edge_time_ps,
                                  double sample_step_ps = kDefaultSampleStepPs);

/// First-order low-pass, tau = 1 / (2 pi f3db), step-invariant discretization.
DriveWaveform apply_bandwidth(const DriveWaveform& wave, double f3db_ghz);

struct SwitchSplit {
  double cross;
  double bar;
};

/// Push-pull MZI: cross = sin^2(pi v / (2 v_pi)), squeezed so that neither port
/// drops below the extinction floor 10^(-extinction_db/10).
SwitchSplit switch_transmission(double volts, double v_pi_volts, double extinction_db);

/// The serializable part of a control program.
struct ProgramSettings {
  double capture_time_ps = 1000.0;
  int hold_round_trips = 5;
  double gate_window_ps = 50.0;
  double edge_time_ps = 10.0;           // 0 selects ideal rectangular gates
  std::optional<double> f3db_ghz;       // unset: use the buffer's EO bandwidth
  double sample_step_ps = kDefaultSampleStepPs;
};

void to_json(nlohmann::json& j, const ProgramSettings& s);
ProgramSettings program_settings_from_json(const nlohmann::json& j);

class ControlProgram {
 public:
  /// Ideal rectangular gates, no bandwidth limit.
  static ControlProgram rectangular(const GateSchedule& sched, const optics::BufferModel& buf);
  /// Ramped edges followed by a single-pole filter at f3db (if given).
  static ControlProgram shaped(const GateSchedule& sched, const optics::BufferModel& buf,
                               double edge_time_ps, std::optional<double> f3db_ghz,
                               double sample_step_ps = kDefaultSampleStepPs);
  /// Builds the schedule and waveform described by `settings`.
  static ControlProgram from_settings(const ProgramSettings& settings,
                                      const optics::BufferModel& buf,
                                      const optics::SourceModel& src);

  [[nodiscard]] const GateSchedule& schedule() const { return schedule_; }
  [[nodiscard]] bool is_rectangular() const { return !waveform_.has_value(); }
  [[nodiscard]] double edge_time_ps() const { return edge_time_ps_; }
  [[nodiscard]] std::optional<double> f3db_ghz() const { return f3db_ghz_; }
  [[nodiscard]] const std::optional<DriveWaveform>& waveform() const { return waveform_; }
  [[nodiscard]] double span_ps() const { return schedule_.repetition_period_ps; }
  [[nodiscard]] ProgramSettings settings() const;

  /// Drive voltage at time t, periodic in the repetition period.
  [[nodiscard]] double drive_at(double t_ps) const;
  [[nodiscard]] double cross_fraction(double t_ps) const;
  /// Sampled drive over one period (the rectangle is sampled for rectangular programs).
  [[nodiscard]] DriveWaveform sampled(double sample_step_ps = kDefaultSampleStepPs) const;

 private:
  GateSchedule schedule_;
  double v_pi_volts_ = 0.0;
  double extinction_db_ = 0.0;
  double edge_time_ps_ = 0.0;
  std::optional<double> f3db_ghz_;
  double sample_step_ps_ = kDefaultSampleStepPs;
  std::optional<DriveWaveform> waveform_;
};

/// Lists every timing rule the schedule breaks; an empty report means runnable.
ValidationReport validate_schedule(const GateSchedule& sched, double edge_time_ps,
                                   const optics::SourceModel& src,
                                   const optics::BufferModel& buf);
ValidationReport validate_program(const ControlProgram& program, const optics::SourceModel& src,
                                  const optics::BufferModel& buf);
ValidationReport validate_program(const ProgramSettings& settings,
                                  const optics::SourceModel& src,
                                  const optics::BufferModel& buf);

/// Two-column CSV: time_ps,volts
void write_waveform_csv(std::ostream& os, const DriveWaveform& wave);
/// Reads a two-column CSV (e.g. a measured drive trace).
DriveWaveform read_waveform_csv(std::istream& is, double v_pi_volts);

}  // namespace spbuf::control
