#include "spbuf/pipeline.hpp"

#include <algorithm>
#include <limits>

#include "spbuf/parallel.hpp"
#include "spbuf/rng.hpp"

namespace spbuf::cli {

using detection::Channel;
using detection::DetectionEvent;

namespace {

struct ChunkOutput {
  std::vector<DetectionEvent> events;
  std::vector<optics::PhotonRecord> records;
  optics::LossTally tally;
};

ChunkOutput simulate_chunk(const optics::SourceModel& src, const optics::BufferModel& buf,
                           const control::ControlProgram& program,
                           const detection::DetectorModel& det, std::uint64_t n_pulses,
                           std::uint64_t seed, const AcquisitionOptions& opt, std::uint64_t chunk) {
  const std::uint64_t begin = chunk * opt.chunk_pulses;
  const std::uint64_t count = std::min(opt.chunk_pulses, n_pulses - begin);
  auto run = optics::run_pulses(src, buf, program, begin, count, seed);

  const double period = src.repetition_period_ps;
  const detection::TimeSpan span{static_cast<double>(begin) * period,
                                 static_cast<double>(begin + count) * period};
  ChunkOutput out;
  out.tally = run.tally;
  auto rng_a = chunk_stream(seed, StreamDomain::ClicksA, chunk);
  if (opt.hbt) {
    auto rng_split = chunk_stream(seed, StreamDomain::Splitter, chunk);
    auto rng_b = chunk_stream(seed, StreamDomain::ClicksB, chunk);
    const auto split = detection::beamsplit(run.records, opt.splitter_ratio, rng_split);
    const auto a = detection::generate_clicks(split.a, Channel::A, det, span, rng_a);
    const auto b = detection::generate_clicks(split.b, Channel::B, det, span, rng_b);
    out.events.resize(a.size() + b.size());
    std::merge(a.begin(), a.end(), b.begin(), b.end(), out.events.begin(), detection::event_before);
  } else {
    out.events = detection::generate_clicks(run.records, Channel::A, det, span, rng_a);
  }
  if (opt.keep_records) out.records = std::move(run.records);
  return out;
}

}  // namespace

detection::Histogram Acquisition::combined() const {
  detection::Histogram h = hist_a;
  if (!hist_b.counts.empty()) {
    for (std::size_t i = 0; i < h.counts.size(); ++i) h.counts[i] += hist_b.counts[i];
  }
  return h;
}

Acquisition acquire(const optics::SourceModel& src, const optics::BufferModel& buf,
                    const control::ControlProgram& program, const detection::DetectorModel& det,
                    std::uint64_t n_pulses, std::uint64_t seed, const AcquisitionOptions& opt) {
  if (n_pulses < 1) throw ConfigError("n_pulses must be >= 1");
  if (opt.chunk_pulses < 1) throw ConfigError("chunk_pulses must be >= 1");
  if (opt.g2_gate && !opt.hbt) throw ContractError("g2 gate requires the HBT splitter");

  Acquisition acq;
  acq.n_triggers = n_pulses;
  acq.hist_a = detection::make_histogram(opt.histogram, n_pulses);
  if (opt.hbt) acq.hist_b = detection::make_histogram(opt.histogram, n_pulses);

  std::optional<analysis::CoincidenceCounter> counter;
  if (opt.g2_gate) counter.emplace(src.repetition_period_ps, *opt.g2_gate);

  detection::DeadTimeFilter filters[2] = {detection::DeadTimeFilter(det.dead_time_ps),
                                          detection::DeadTimeFilter(det.dead_time_ps)};
  auto finalize = [&](const DetectionEvent& e) {
    const int ch = e.channel == Channel::A ? 0 : 1;
    if (!filters[ch].accept(e.time_ps)) {
      ++acq.dropped_by_dead_time;
      return;
    }
    detection::fill(ch == 0 ? acq.hist_a : acq.hist_b, e.time_ps);
    if (counter) counter->add(e);
    if (opt.keep_events) acq.events.push_back(e);
  };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  const std::uint64_t n_chunks = (n_pulses + opt.chunk_pulses - 1) / opt.chunk_pulses;
  const std::uint64_t batch = std::max<std::uint64_t>(4, 4ULL * std::max(1U, opt.jobs));
  std::vector<DetectionEvent> pending;
  std::vector<DetectionEvent> scratch;
  double last_finalized = -kInf;

  for (std::uint64_t first = 0; first < n_chunks; first += batch) {
    const std::uint64_t count = std::min(batch, n_chunks - first);
    std::vector<ChunkOutput> outputs(count);
    parallel_for(count, opt.jobs, [&](std::size_t i) {
      outputs[i] = simulate_chunk(src, buf, program, det, n_pulses, seed, opt, first + i);
    });

    // Earliest event still to come from later chunks of this batch.
    std::vector<double> later_min(count + 1, kInf);
    for (std::uint64_t i = count; i-- > 0;) {
      const double m = outputs[i].events.empty() ? kInf : outputs[i].events.front().time_ps;
      later_min[i] = std::min(later_min[i + 1], m);
    }
    const bool last_batch = first + count == n_chunks;

    for (std::uint64_t i = 0; i < count; ++i) {
      auto& out = outputs[i];
      if (!out.events.empty() && out.events.front().time_ps < last_finalized) {
        throw ContractError("detection events reordered across chunk boundaries; "
                            "jitter is too large for the chunk size");
      }
      scratch.resize(pending.size() + out.events.size());
      std::merge(pending.begin(), pending.end(), out.events.begin(), out.events.end(),
                 scratch.begin(), detection::event_before);
      pending.swap(scratch);

      const double frontier = (i + 1 < count) ? later_min[i + 1] : (last_batch ? kInf : -kInf);
      auto cut = std::lower_bound(pending.begin(), pending.end(), frontier,
                                  [](const DetectionEvent& e, double t) { return e.time_ps < t; });
      for (auto it = pending.begin(); it != cut; ++it) finalize(*it);
      if (cut != pending.begin()) last_finalized = std::prev(cut)->time_ps;
      pending.erase(pending.begin(), cut);

      acq.tally.merge(out.tally);
      if (opt.keep_records) {
        acq.records.insert(acq.records.end(), out.records.begin(), out.records.end());
      }
    }
  }
  for (const auto& e : pending) finalize(e);
  if (counter) acq.g2 = counter->counts();
  return acq;
}

}  // namespace spbuf::cli
