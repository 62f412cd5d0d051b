#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "spbuf/errors.hpp"
#include "spbuf/optics.hpp"
#include "spbuf/rng.hpp"

namespace spbuf::detection {

enum class Channel : std::uint8_t { A = 0, B = 1 };

char to_char(Channel c);

/// SNSPD parameters. Defaults are typical values, not measured ones.
struct DetectorModel {
  double efficiency = 0.8;
  double jitter_sigma_ps = 15.0;
  double dark_rate_hz = 100.0;
  double dead_time_ps = 50000.0;

  /// Range checks plus a warning when jitter would smear adjacent round trips.
  [[nodiscard]] ValidationReport check(double round_trip_time_ps) const;
};

struct DetectionEvent {
  Channel channel = Channel::A;
  double time_ps = 0.0;

  friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

/// Time order; ties broken by channel so merged streams have one canonical order.
inline bool event_before(const DetectionEvent& x, const DetectionEvent& y) {
  if (x.time_ps != y.time_ps) return x.time_ps < y.time_ps;
  return x.channel < y.channel;
}

struct TimeSpan {
  double begin_ps = 0.0;
  double end_ps = 0.0;
};

struct SplitStreams {
  std::vector<optics::PhotonRecord> a;
  std::vector<optics::PhotonRecord> b;
};

/// Routes each photon to A with probability `ratio`, otherwise to B.
SplitStreams beamsplit(std::span<const optics::PhotonRecord> photons, double ratio, ChunkRng& rng);

/// Efficiency, jitter and dark counts, without dead time. Photons are put in
/// canonical order before any randomness is drawn, so the result does not
/// depend on input order. Events outside `span` are dropped. Output is sorted.
std::vector<DetectionEvent> generate_clicks(std::span<const optics::PhotonRecord> photons,
                                            Channel channel, const DetectorModel& det,
                                            TimeSpan span, ChunkRng& rng);

/// Non-paralyzable dead time for one channel: an event is kept if it is at
/// least `dead_time_ps` after the previously kept one. Feed in time order.
class DeadTimeFilter {
 public:
  explicit DeadTimeFilter(double dead_time_ps) : dead_time_ps_(dead_time_ps) {}

  bool accept(double time_ps) {
    if (last_ && time_ps < *last_ + dead_time_ps_) return false;
    last_ = time_ps;
    return true;
  }

 private:
  double dead_time_ps_;
  std::optional<double> last_;
};

/// Full detector response for one channel over an acquisition of
/// `acquisition_span_ps` starting at 0.
std::vector<DetectionEvent> detect(std::span<const optics::PhotonRecord> photons, Channel channel,
                                   const DetectorModel& det, double acquisition_span_ps,
                                   ChunkRng& rng);

/// Fold window [t0, t1) relative to each trigger, split into equal bins.
struct HistogramSpec {
  double trigger_period_ps = 10000.0;
  double bin_width_ps = 1.0;
  double t0_ps = 0.0;
  double t1_ps = 10000.0;

  /// Throws ConfigError on a bad window or a bin width that does not divide it.
  [[nodiscard]] std::size_t bin_count() const;
};

/// Trigger-synchronized histogram. Integer counts for measured data; the
/// same layout with real-valued counts is used for expectations.
template <class Count>
struct BasicHistogram {
  double trigger_period_ps = 0.0;
  double bin_width_ps = 0.0;
  double t0_ps = 0.0;
  std::vector<Count> counts;
  std::uint64_t n_triggers = 0;

  [[nodiscard]] double bin_start(std::size_t i) const {
    return t0_ps + static_cast<double>(i) * bin_width_ps;
  }
  [[nodiscard]] double bin_centre(std::size_t i) const { return bin_start(i) + 0.5 * bin_width_ps; }
  [[nodiscard]] double window_end() const { return bin_start(counts.size()); }
  [[nodiscard]] Count total() const {
    Count s{};
    for (auto c : counts) s += c;
    return s;
  }
};

using Histogram = BasicHistogram<std::uint64_t>;
using RealHistogram = BasicHistogram<double>;

Histogram make_histogram(const HistogramSpec& spec, std::uint64_t n_triggers);

/// Folds one event time into the histogram; returns false if outside the window.
bool fill(Histogram& h, double time_ps);

/// Elementwise sum; both histograms must share the same grid.
void merge_into(Histogram& into, const Histogram& other);

Histogram build_histogram(std::span<const DetectionEvent> events, const HistogramSpec& spec,
                          std::uint64_t n_triggers);

/// CSV body: bin_start_ps,count
void write_histogram_csv(std::ostream& os, const Histogram& h);
void write_histogram_csv(std::ostream& os, const RealHistogram& h);
/// JSON header: {bin_width_ps, n_triggers, t0_ps}
nlohmann::json histogram_header(const Histogram& h);
/// Reads a CSV body plus its JSON header; trigger period comes from the caller.
Histogram read_histogram(std::istream& csv, const nlohmann::json& header,
                         double trigger_period_ps);

/// CSV: channel,time_ps
void write_events_csv(std::ostream& os, std::span<const DetectionEvent> events);
std::vector<DetectionEvent> read_events_csv(std::istream& is);

}  // namespace spbuf::detection
