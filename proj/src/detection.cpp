#include "spbuf/detection.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <string>

#include "spbuf/format.hpp"

namespace spbuf::detection {

char to_char(Channel c) { return c == Channel::A ? 'A' : 'B'; }

ValidationReport DetectorModel::check(double round_trip_time_ps) const {
  ValidationReport r;
  if (!(efficiency >= 0.0 && efficiency <= 1.0)) {
    r.add(IssueKind::Config, "detector.efficiency", "must lie in [0, 1]");
  }
  if (!(std::isfinite(jitter_sigma_ps) && jitter_sigma_ps >= 0.0)) {
    r.add(IssueKind::Config, "detector.jitter_sigma_ps", "must be >= 0");
  } else if (jitter_sigma_ps > round_trip_time_ps / 3.0) {
    r.add(IssueKind::Warning, "detector.jitter_sigma_ps",
          "jitter above a third of the round trip smears adjacent storage peaks");
  }
  if (!(std::isfinite(dark_rate_hz) && dark_rate_hz >= 0.0)) {
    r.add(IssueKind::Config, "detector.dark_rate_hz", "must be >= 0");
  }
  if (!(std::isfinite(dead_time_ps) && dead_time_ps >= 0.0)) {
    r.add(IssueKind::Config, "detector.dead_time_ps", "must be >= 0");
  }
  return r;
}

SplitStreams beamsplit(std::span<const optics::PhotonRecord> photons, double ratio, ChunkRng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ContractError("splitter ratio must lie in [0, 1]");
  SplitStreams out;
  for (const auto& p : photons) {
    (bernoulli(rng, ratio) ? out.a : out.b).push_back(p);
  }
  return out;
}

std::vector<DetectionEvent> generate_clicks(std::span<const optics::PhotonRecord> photons,
                                            Channel channel, const DetectorModel& det,
                                            TimeSpan span, ChunkRng& rng) {
  std::vector<optics::PhotonRecord> ordered(photons.begin(), photons.end());
  std::sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) {
    if (x.exit_time_ps != y.exit_time_ps) return x.exit_time_ps < y.exit_time_ps;
    if (x.origin_pulse_index != y.origin_pulse_index) {
      return x.origin_pulse_index < y.origin_pulse_index;
    }
    if (x.round_trips_completed != y.round_trips_completed) {
      return x.round_trips_completed < y.round_trips_completed;
    }
    return x.path_tag < y.path_tag;
  });

  std::vector<DetectionEvent> events;
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (const auto& p : ordered) {
    if (!bernoulli(rng, det.efficiency)) continue;
    double t = p.exit_time_ps;
    if (det.jitter_sigma_ps > 0.0) t += det.jitter_sigma_ps * jitter(rng);
    if (t >= span.begin_ps && t < span.end_ps) events.push_back({channel, t});
  }

  const double span_ps = span.end_ps - span.begin_ps;
  if (det.dark_rate_hz > 0.0 && span_ps > 0.0) {
    std::poisson_distribution<std::uint64_t> n_dark(det.dark_rate_hz * span_ps * 1e-12);
    const std::uint64_t n = n_dark(rng);
    for (std::uint64_t i = 0; i < n; ++i) {
      events.push_back({channel, span.begin_ps + span_ps * uniform01(rng)});
    }
  }
  std::sort(events.begin(), events.end(), event_before);
  return events;
}

std::vector<DetectionEvent> detect(std::span<const optics::PhotonRecord> photons, Channel channel,
                                   const DetectorModel& det, double acquisition_span_ps,
                                   ChunkRng& rng) {
  auto clicks = generate_clicks(photons, channel, det, {0.0, acquisition_span_ps}, rng);
  DeadTimeFilter filter(det.dead_time_ps);
  std::erase_if(clicks, [&](const DetectionEvent& e) { return !filter.accept(e.time_ps); });
  return clicks;
}

std::size_t HistogramSpec::bin_count() const {
  if (!(trigger_period_ps > 0.0)) throw ConfigError("trigger period must be > 0");
  if (!(bin_width_ps > 0.0)) throw ConfigError("bin width must be > 0");
  const double width = t1_ps - t0_ps;
  if (!(width > 0.0) || width > trigger_period_ps) {
    throw ConfigError("histogram window must satisfy 0 < t1 - t0 <= trigger period");
  }
  const double bins = width / bin_width_ps;
  if (std::abs(bins - std::round(bins)) > 1e-9 * std::max(1.0, bins)) {
    throw ConfigError("bin width " + format_number(bin_width_ps) +
                      " ps does not divide the histogram window of " + format_number(width) +
                      " ps");
  }
  return static_cast<std::size_t>(std::llround(bins));
}

Histogram make_histogram(const HistogramSpec& spec, std::uint64_t n_triggers) {
  Histogram h;
  h.trigger_period_ps = spec.trigger_period_ps;
  h.bin_width_ps = spec.bin_width_ps;
  h.t0_ps = spec.t0_ps;
  h.counts.assign(spec.bin_count(), 0);
  h.n_triggers = n_triggers;
  return h;
}

bool fill(Histogram& h, double time_ps) {
  const double period = h.trigger_period_ps;
  double phase = std::fmod(time_ps - h.t0_ps, period);
  if (phase < 0.0) phase += period;
  const double pos = phase / h.bin_width_ps;
  if (pos >= static_cast<double>(h.counts.size())) return false;
  ++h.counts[static_cast<std::size_t>(pos)];
  return true;
}

void merge_into(Histogram& into, const Histogram& other) {
  if (into.counts.size() != other.counts.size() || into.bin_width_ps != other.bin_width_ps ||
      into.t0_ps != other.t0_ps || into.trigger_period_ps != other.trigger_period_ps) {
    throw ContractError("cannot merge histograms on different grids");
  }
  for (std::size_t i = 0; i < into.counts.size(); ++i) into.counts[i] += other.counts[i];
  into.n_triggers += other.n_triggers;
}

Histogram build_histogram(std::span<const DetectionEvent> events, const HistogramSpec& spec,
                          std::uint64_t n_triggers) {
  Histogram h = make_histogram(spec, n_triggers);
  for (const auto& e : events) fill(h, e.time_ps);
  return h;
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin_start_ps,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    os << format_number(h.bin_start(i)) << ',' << h.counts[i] << '\n';
  }
}

void write_histogram_csv(std::ostream& os, const RealHistogram& h) {
  os << "bin_start_ps,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    os << format_number(h.bin_start(i)) << ',' << format_number(h.counts[i]) << '\n';
  }
}

nlohmann::json histogram_header(const Histogram& h) {
  return {{"bin_width_ps", h.bin_width_ps}, {"n_triggers", h.n_triggers}, {"t0_ps", h.t0_ps}};
}

Histogram read_histogram(std::istream& csv, const nlohmann::json& header,
                         double trigger_period_ps) {
  Histogram h;
  try {
    h.bin_width_ps = header.at("bin_width_ps").get<double>();
    h.n_triggers = header.at("n_triggers").get<std::uint64_t>();
    h.t0_ps = header.at("t0_ps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad histogram header: ") + e.what());
  }
  h.trigger_period_ps = trigger_period_ps;
  std::string line;
  bool first = true;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("bin_start_ps", 0) == 0) continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw ConfigError("histogram CSV rows need exactly two columns");
    const double start = parse_double(f[0], "bin_start_ps");
    const double expected = h.bin_start(h.counts.size());
    if (std::abs(start - expected) > 1e-6 * h.bin_width_ps) {
      throw ConfigError("histogram bins are not contiguous at " + std::string(f[0]));
    }
    h.counts.push_back(parse_uint(f[1], "count"));
  }
  if (h.window_end() - h.t0_ps > trigger_period_ps + 1e-9) {
    throw ConfigError("histogram window is longer than the trigger period");
  }
  return h;
}

void write_events_csv(std::ostream& os, std::span<const DetectionEvent> events) {
  os << "channel,time_ps\n";
  for (const auto& e : events) os << to_char(e.channel) << ',' << format_number(e.time_ps) << '\n';
}

std::vector<DetectionEvent> read_events_csv(std::istream& is) {
  std::vector<DetectionEvent> events;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("channel", 0) == 0) continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 2 || (f[0] != "A" && f[0] != "B")) {
      throw ConfigError("bad event row: '" + line + "'");
    }
    events.push_back({f[0] == "A" ? Channel::A : Channel::B, parse_double(f[1], "time_ps")});
  }
  return events;
}

}  // namespace spbuf::detection
