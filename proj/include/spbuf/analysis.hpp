#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spbuf/control.hpp"
#include "spbuf/detection.hpp"
#include "spbuf/optics.hpp"

namespace spbuf::analysis {

enum class Normalization { MaxPeak, FirstPeak };

struct PeakEntry {
  int k = 0;
  double raw_counts = 0.0;
  double amplitude = 0.0;
};

/// Peak amplitudes per round trip. Entries with only background in their gate
/// may have amplitude 0; fit_loss skips those.
struct PeakSeries {
  std::vector<PeakEntry> entries;
  Normalization mode = Normalization::MaxPeak;
};

/// Builds a series from (k, raw counts) pairs, sorted by k and normalized.
PeakSeries make_peak_series(std::vector<std::pair<int, double>> raw, Normalization mode);

/// Sum of bins whose centre lies in [centre - half_width, centre + half_width).
/// The centre is folded into the histogram window.
template <class Count>
double gate_integral(const detection::BasicHistogram<Count>& h, double centre_ps,
                     double half_width_ps);

/// Peak k is gated at capture + k * round_trip.
PeakSeries extract_peaks(const detection::Histogram& h, const optics::BufferModel& buf,
                         double capture_time_ps, int k_max, double gate_half_width_ps,
                         Normalization mode = Normalization::MaxPeak);
PeakSeries extract_peaks(const detection::RealHistogram& h, const optics::BufferModel& buf,
                         double capture_time_ps, int k_max, double gate_half_width_ps,
                         Normalization mode = Normalization::MaxPeak);

struct FitOptions {
  int min_k = 1;          // the pass-through point is left out by default
  bool weighted = false;  // weights proportional to raw counts
};

struct LossFit {
  double slope_db_per_trip = 0.0;
  double intercept_db = 0.0;
  double residual_rms_db = 0.0;
  int n_points = 0;
  std::vector<std::string> warnings;
};

/// Least squares of -10 log10(A_k) against k.
LossFit fit_loss(const PeakSeries& series, const FitOptions& options = {});

/// Analysis window relative to each trigger.
struct Gate {
  double start_ps = 0.0;
  double end_ps = 0.0;
};

struct G2Counts {
  std::uint64_t n_coincidences = 0;
  std::uint64_t n_a = 0;
  std::uint64_t n_b = 0;

  void merge(const G2Counts& other) {
    n_coincidences += other.n_coincidences;
    n_a += other.n_a;
    n_b += other.n_b;
  }
};

/// Pulsed zero-delay coincidence counting. Events must arrive in time order
/// (both channels merged). A coincidence is a trigger with at least one
/// in-gate event on each channel.
class CoincidenceCounter {
 public:
  CoincidenceCounter(double trigger_period_ps, Gate gate);

  void add(const detection::DetectionEvent& e);
  [[nodiscard]] const G2Counts& counts() const { return counts_; }

 private:
  double period_;
  Gate gate_;
  G2Counts counts_;
  std::int64_t last_trigger_[2] = {-1, -1};
};

struct G2Result {
  double g2 = 0.0;
  double std_error = 0.0;
  std::uint64_t n_coincidences = 0;
  std::uint64_t n_a = 0;
  std::uint64_t n_b = 0;
  std::uint64_t n_triggers = 0;
};

/// g2 = n_cc n_trig / (n_a n_b), Poisson-propagated standard error. With no
/// coincidences g2 is 0 and the error is evaluated at n_cc = 1.
G2Result g2_from_counts(const G2Counts& counts, std::uint64_t n_triggers);

G2Result estimate_g2(std::span<const detection::DetectionEvent> events_a,
                     std::span<const detection::DetectionEvent> events_b,
                     double trigger_period_ps, Gate gate, std::uint64_t n_triggers);

/// Gate of +-half_width around the k-th storage peak.
Gate storage_gate(double capture_time_ps, int k, const optics::BufferModel& buf,
                  double half_width_ps);

/// Closed-form expected counts for a rectangular program: every path through
/// the loop weighted by its probability, smeared by the Gaussian jitter, plus
/// a uniform dark floor. Dead time is not modelled. `channel_fraction` is the
/// share of photons routed to this detector (1 without a splitter).
detection::RealHistogram expected_histogram(const optics::SourceModel& src,
                                            const optics::BufferModel& buf,
                                            const control::ControlProgram& program,
                                            const detection::DetectorModel& det,
                                            std::uint64_t n_pulses,
                                            const detection::HistogramSpec& spec,
                                            double channel_fraction = 1.0);

/// Undoes non-paralyzable dead-time losses in a full-period histogram: each
/// bin is divided by the probability that the detector was live, estimated
/// from the recorded events in the preceding dead-time interval.
detection::RealHistogram correct_dead_time(const detection::Histogram& h, double dead_time_ps);

detection::RealHistogram to_real(const detection::Histogram& h);
void add_into(detection::RealHistogram& into, const detection::RealHistogram& other);

struct PeakShape {
  double integral = 0.0;
  double centroid_ps = 0.0;
  double sigma_ps = 0.0;
};

/// Moments of the counts within +-half_width of `centre_ps`.
template <class Count>
PeakShape measure_peak(const detection::BasicHistogram<Count>& h, double centre_ps,
                       double half_width_ps);

struct ChiSquareResult {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 0.0;
};

/// Goodness of fit of observed per-pulse counts (frequency of 0, 1, 2, ...)
/// against Poisson(mean). Tail bins are pooled until every expected count >= 5.
ChiSquareResult poisson_chi_square(std::span<const std::uint64_t> frequencies, double mean);

void write_peaks_csv(std::ostream& os, const PeakSeries& series);
PeakSeries read_peaks_csv(std::istream& is, Normalization mode = Normalization::MaxPeak);

nlohmann::json to_json(const LossFit& fit);
nlohmann::json to_json(const G2Result& g2);
std::string_view to_string(Normalization mode);

}  // namespace spbuf::analysis
