#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "spbuf/errors.hpp"
#include "spbuf/rng.hpp"

namespace spbuf::control {
class ControlProgram;
}

namespace spbuf::optics {

enum class SourceKind { WeakCoherent, SingleFock };

std::string_view to_string(SourceKind kind);

/// Pulsed source at the chip input. Pulses are instants carrying n photons.
struct SourceModel {
  SourceKind kind = SourceKind::WeakCoherent;
  double mean_photon_number = 0.1;  // coherent only
  int fock_n = 1;                   // Fock only
  double repetition_period_ps = 10000.0;
  double pulse_epoch_ps = 1000.0;   // first pulse, relative to the trigger
  double wavelength_nm = 1550.0;    // metadata

  /// Mean photons per pulse for either statistics kind.
  [[nodiscard]] double mean_photons() const;
  [[nodiscard]] ValidationReport check() const;
};

/// Loop and switch parameters. Switch transit is folded into the round trip.
struct BufferModel {
  double round_trip_time_ps = 100.0;
  double round_trip_loss_db = 0.74;
  double input_coupling_loss_db = 2.73;
  double output_coupling_loss_db = 2.73;
  double insertion_loss_budget_db = 6.2;
  double v_pi_volts = 4.0;
  double switch_extinction_db = std::numeric_limits<double>::infinity();
  double eo_bandwidth_ghz = 40.0;
  int max_round_trips = 14;

  [[nodiscard]] ValidationReport check() const;
};

/// Run-assembly constraints that involve both the source and the buffer.
ValidationReport check_compatible(const SourceModel& src, const BufferModel& buf);

enum class PathTag : std::uint8_t { Stored, Leaked, DirectPass };

std::string_view to_string(PathTag tag);

struct PhotonRecord {
  std::uint64_t origin_pulse_index = 0;
  double exit_time_ps = 0.0;
  int round_trips_completed = 0;
  PathTag path_tag = PathTag::Stored;

  friend bool operator==(const PhotonRecord&, const PhotonRecord&) = default;
};

enum class LossPoint : std::uint8_t { InputCoupling, Loop, OutputCoupling, Overflow };

struct Lost {
  LossPoint where;
  int round_trips_completed;
};

using PhotonFate = std::variant<PhotonRecord, Lost>;

/// 10^(-loss_db/10). Throws std::domain_error for negative or non-finite input.
double db_to_transmission(double loss_db);

/// Photon number of one pulse: Poisson(mu) for coherent input, fock_n for Fock.
int sample_pulse_photons(const SourceModel& src, PulseRng& rng);

/// Propagates one photon entering the chip at `entry_time_ps` (relative to the
/// program's trigger, within one repetition period). The returned record's
/// exit time is in the same frame; `origin_pulse_index` is left at 0.
PhotonFate propagate_photon(const BufferModel& buf, const control::ControlProgram& program,
                            double entry_time_ps, PulseRng& rng);

struct LossTally {
  std::uint64_t photons_emitted = 0;
  std::uint64_t exited = 0;
  std::uint64_t lost_input = 0;
  std::uint64_t lost_loop = 0;
  std::uint64_t lost_output = 0;
  std::uint64_t overflow = 0;

  void merge(const LossTally& other);
  friend bool operator==(const LossTally&, const LossTally&) = default;
};

struct ExperimentRun {
  std::vector<PhotonRecord> records;  // ordered by pulse index
  LossTally tally;
};

/// Simulates pulses [first_pulse, first_pulse + n_pulses). Exit times are
/// absolute: pulse_index * period + epoch + round_trips * round_trip_time.
ExperimentRun run_pulses(const SourceModel& src, const BufferModel& buf,
                         const control::ControlProgram& program, std::uint64_t first_pulse,
                         std::uint64_t n_pulses, std::uint64_t seed);

/// Full run over n_pulses >= 1. Output is identical for any `jobs`.
ExperimentRun run_experiment(const SourceModel& src, const BufferModel& buf,
                             const control::ControlProgram& program, std::uint64_t n_pulses,
                             std::uint64_t seed, unsigned jobs = 1);

/// Debug dump: pulse_index,exit_time_ps,round_trips,path_tag
void write_records_csv(std::ostream& os, std::span<const PhotonRecord> records);

}  // namespace spbuf::optics
