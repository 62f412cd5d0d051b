#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "spbuf/analysis.hpp"
#include "spbuf/control.hpp"
#include "spbuf/detection.hpp"
#include "spbuf/optics.hpp"

namespace spbuf::cli {

struct AcquisitionOptions {
  bool hbt = false;
  double splitter_ratio = 0.5;
  detection::HistogramSpec histogram;
  std::optional<analysis::Gate> g2_gate;  // coincidence counting needs hbt
  bool keep_events = false;
  bool keep_records = false;
  std::uint64_t chunk_pulses = 1U << 16;
  unsigned jobs = 1;
};

/// Everything one acquisition produces. Histograms are per channel; channel B
/// is empty without the splitter.
struct Acquisition {
  detection::Histogram hist_a;
  detection::Histogram hist_b;
  analysis::G2Counts g2;
  optics::LossTally tally;
  std::vector<detection::DetectionEvent> events;  // merged, time ordered
  std::vector<optics::PhotonRecord> records;
  std::uint64_t n_triggers = 0;
  std::uint64_t dropped_by_dead_time = 0;

  /// Sum of both channels.
  [[nodiscard]] detection::Histogram combined() const;
};

/// Source -> chip -> (splitter) -> detectors -> time tagger, streamed in
/// fixed-size pulse chunks. Chunks are simulated in parallel; dead time,
/// histogramming and coincidence counting then run over the merged,
/// time-ordered event stream, so the result depends only on the seed and
/// chunk size, never on `jobs`.
Acquisition acquire(const optics::SourceModel& src, const optics::BufferModel& buf,
                    const control::ControlProgram& program, const detection::DetectorModel& det,
                    std::uint64_t n_pulses, std::uint64_t seed, const AcquisitionOptions& options);

}  // namespace spbuf::cli
