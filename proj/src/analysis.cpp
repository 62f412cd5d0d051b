#include "spbuf/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

#include "spbuf/format.hpp"

namespace spbuf::analysis {

using detection::BasicHistogram;
using detection::DetectionEvent;
using detection::Histogram;
using detection::RealHistogram;

namespace {

// Signed distance from `ref` to `x`, wrapped into [-period/2, period/2).
double cyclic_offset(double x, double ref, double period) {
  double d = std::fmod(x - ref, period);
  if (d < -0.5 * period) d += period;
  if (d >= 0.5 * period) d -= period;
  return d;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

template <class Count>
void require_nonempty(const BasicHistogram<Count>& h) {
  if (h.counts.empty()) throw AnalysisError("histogram has no bins");
  if (!(h.total() > Count{})) throw AnalysisError("histogram is empty");
}

template <class Count>
PeakSeries extract_peaks_impl(const BasicHistogram<Count>& h, const optics::BufferModel& buf,
                              double capture_time_ps, int k_max, double gate_half_width_ps,
                              Normalization mode) {
  if (!(gate_half_width_ps > 0.0) || gate_half_width_ps >= 0.5 * buf.round_trip_time_ps) {
    throw ConfigError("peak gate half width must lie in (0, round_trip_time/2); gates would overlap");
  }
  if (k_max < 0) throw ConfigError("k_max must be >= 0");
  require_nonempty(h);
  std::vector<std::pair<int, double>> raw;
  for (int k = 0; k <= k_max; ++k) {
    const double centre = capture_time_ps + k * buf.round_trip_time_ps;
    raw.emplace_back(k, gate_integral(h, centre, gate_half_width_ps));
  }
  return make_peak_series(std::move(raw), mode);
}

}  // namespace

std::string_view to_string(Normalization mode) {
  return mode == Normalization::MaxPeak ? "max_peak" : "first_peak";
}

PeakSeries make_peak_series(std::vector<std::pair<int, double>> raw, Normalization mode) {
  if (raw.empty()) throw AnalysisError("no peaks to normalize");
  std::sort(raw.begin(), raw.end());
  for (std::size_t i = 1; i < raw.size(); ++i) {
    if (raw[i].first == raw[i - 1].first) throw AnalysisError("duplicate round-trip index");
  }
  double reference = 0.0;
  if (mode == Normalization::MaxPeak) {
    for (const auto& [k, c] : raw) reference = std::max(reference, c);
  } else {
    reference = raw.front().second;
  }
  if (!(reference > 0.0)) throw AnalysisError("normalization peak has no counts");
  PeakSeries s;
  s.mode = mode;
  for (const auto& [k, c] : raw) s.entries.push_back({k, c, c / reference});
  return s;
}

template <class Count>
double gate_integral(const BasicHistogram<Count>& h, double centre_ps, double half_width_ps) {
  double sum = 0.0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double d = cyclic_offset(h.bin_centre(i), centre_ps, h.trigger_period_ps);
    if (d >= -half_width_ps && d < half_width_ps) sum += static_cast<double>(h.counts[i]);
  }
  return sum;
}

template double gate_integral(const Histogram&, double, double);
template double gate_integral(const RealHistogram&, double, double);

PeakSeries extract_peaks(const Histogram& h, const optics::BufferModel& buf,
                         double capture_time_ps, int k_max, double gate_half_width_ps,
                         Normalization mode) {
  return extract_peaks_impl(h, buf, capture_time_ps, k_max, gate_half_width_ps, mode);
}

PeakSeries extract_peaks(const RealHistogram& h, const optics::BufferModel& buf,
                         double capture_time_ps, int k_max, double gate_half_width_ps,
                         Normalization mode) {
  return extract_peaks_impl(h, buf, capture_time_ps, k_max, gate_half_width_ps, mode);
}

LossFit fit_loss(const PeakSeries& series, const FitOptions& options) {
  LossFit fit;
  std::vector<double> ks, ys, ws;
  for (const auto& e : series.entries) {
    if (e.k < options.min_k) continue;
    if (!(e.amplitude > 0.0) || !(e.raw_counts > 0.0)) {
      fit.warnings.push_back("peak k=" + std::to_string(e.k) + " has no counts; excluded from fit");
      continue;
    }
    ks.push_back(e.k);
    ys.push_back(-10.0 * std::log10(e.amplitude));
    ws.push_back(options.weighted ? e.raw_counts : 1.0);
  }
  if (ks.size() < 2 || *std::max_element(ks.begin(), ks.end()) == *std::min_element(ks.begin(), ks.end())) {
    throw AnalysisError("insufficient points for loss fit: need at least 2 distinct round trips, have " +
                        std::to_string(ks.size()));
  }
  double sw = 0.0, sk = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    sw += ws[i];
    sk += ws[i] * ks[i];
    sy += ws[i] * ys[i];
  }
  const double kbar = sk / sw;
  const double ybar = sy / sw;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    sxy += ws[i] * (ks[i] - kbar) * (ys[i] - ybar);
    sxx += ws[i] * (ks[i] - kbar) * (ks[i] - kbar);
  }
  fit.slope_db_per_trip = sxy / sxx;
  fit.intercept_db = ybar - fit.slope_db_per_trip * kbar;
  double ss = 0.0;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double r = ys[i] - (fit.intercept_db + fit.slope_db_per_trip * ks[i]);
    ss += r * r;
  }
  fit.residual_rms_db = std::sqrt(ss / static_cast<double>(ks.size()));
  fit.n_points = static_cast<int>(ks.size());
  return fit;
}

CoincidenceCounter::CoincidenceCounter(double trigger_period_ps, Gate gate)
    : period_(trigger_period_ps), gate_(gate) {
  if (!(period_ > 0.0)) throw ContractError("trigger period must be > 0");
  if (!(gate.start_ps >= 0.0 && gate.end_ps > gate.start_ps && gate.end_ps <= period_)) {
    throw ContractError("g2 gate must satisfy 0 <= start < end <= trigger period");
  }
}

void CoincidenceCounter::add(const DetectionEvent& e) {
  const double trig = std::floor(e.time_ps / period_);
  const double phase = e.time_ps - trig * period_;
  if (phase < gate_.start_ps || phase >= gate_.end_ps) return;
  const auto trigger = static_cast<std::int64_t>(trig);
  const int self = e.channel == detection::Channel::A ? 0 : 1;
  const int other = 1 - self;
  (self == 0 ? counts_.n_a : counts_.n_b) += 1;
  if (last_trigger_[self] != trigger) {
    last_trigger_[self] = trigger;
    if (last_trigger_[other] == trigger) ++counts_.n_coincidences;
  }
}

G2Result g2_from_counts(const G2Counts& counts, std::uint64_t n_triggers) {
  if (n_triggers < 1) throw AnalysisError("g2 needs at least one trigger");
  if (counts.n_a == 0 || counts.n_b == 0) {
    throw AnalysisError("g2 undefined: a channel recorded no in-gate events");
  }
  G2Result r;
  r.n_coincidences = counts.n_coincidences;
  r.n_a = counts.n_a;
  r.n_b = counts.n_b;
  r.n_triggers = n_triggers;
  const double na = static_cast<double>(counts.n_a);
  const double nb = static_cast<double>(counts.n_b);
  const double nt = static_cast<double>(n_triggers);
  r.g2 = static_cast<double>(counts.n_coincidences) * nt / (na * nb);
  const double ncc = counts.n_coincidences == 0 ? 1.0 : static_cast<double>(counts.n_coincidences);
  const double g2_for_error = ncc * nt / (na * nb);
  r.std_error = g2_for_error * std::sqrt(1.0 / ncc + 1.0 / na + 1.0 / nb);
  return r;
}

G2Result estimate_g2(std::span<const DetectionEvent> events_a,
                     std::span<const DetectionEvent> events_b, double trigger_period_ps,
                     Gate gate, std::uint64_t n_triggers) {
  std::vector<DetectionEvent> merged;
  merged.reserve(events_a.size() + events_b.size());
  for (auto e : events_a) merged.push_back({detection::Channel::A, e.time_ps});
  for (auto e : events_b) merged.push_back({detection::Channel::B, e.time_ps});
  std::stable_sort(merged.begin(), merged.end(), detection::event_before);
  CoincidenceCounter counter(trigger_period_ps, gate);
  for (const auto& e : merged) counter.add(e);
  return g2_from_counts(counter.counts(), n_triggers);
}

Gate storage_gate(double capture_time_ps, int k, const optics::BufferModel& buf,
                  double half_width_ps) {
  const double centre = capture_time_ps + k * buf.round_trip_time_ps;
  return {centre - half_width_ps, centre + half_width_ps};
}

RealHistogram expected_histogram(const optics::SourceModel& src, const optics::BufferModel& buf,
                                 const control::ControlProgram& program,
                                 const detection::DetectorModel& det, std::uint64_t n_pulses,
                                 const detection::HistogramSpec& spec, double channel_fraction) {
  if (!program.is_rectangular()) {
    throw AnalysisError("unsupported oracle: expected_histogram needs ideal rectangular gates");
  }
  RealHistogram h;
  h.trigger_period_ps = spec.trigger_period_ps;
  h.bin_width_ps = spec.bin_width_ps;
  h.t0_ps = spec.t0_ps;
  h.counts.assign(spec.bin_count(), 0.0);
  h.n_triggers = n_pulses;

  const double period = spec.trigger_period_ps;
  const double t_in = optics::db_to_transmission(buf.input_coupling_loss_db);
  const double t_rt = optics::db_to_transmission(buf.round_trip_loss_db);
  const double t_out = optics::db_to_transmission(buf.output_coupling_loss_db);
  const double scale = src.mean_photons() * static_cast<double>(n_pulses) * t_in * t_out *
                       det.efficiency * channel_fraction;

  auto deposit = [&](double t, double amount) {
    if (amount <= 0.0) return;
    const double sigma = det.jitter_sigma_ps;
    const auto n = static_cast<std::ptrdiff_t>(h.counts.size());
    if (sigma <= 0.0) {
      double phase = std::fmod(t - h.t0_ps, period);
      if (phase < 0.0) phase += period;
      const double pos = phase / h.bin_width_ps;
      if (pos < static_cast<double>(n)) h.counts[static_cast<std::size_t>(pos)] += amount;
      return;
    }
    for (double shift : {-period, 0.0, period}) {
      const double tt = t + shift;
      auto lo = static_cast<std::ptrdiff_t>(std::floor((tt - 10.0 * sigma - h.t0_ps) / h.bin_width_ps));
      auto hi = static_cast<std::ptrdiff_t>(std::ceil((tt + 10.0 * sigma - h.t0_ps) / h.bin_width_ps));
      lo = std::max<std::ptrdiff_t>(lo, 0);
      hi = std::min<std::ptrdiff_t>(hi, n);
      for (std::ptrdiff_t i = lo; i < hi; ++i) {
        const double a = h.bin_start(static_cast<std::size_t>(i));
        const double p = normal_cdf((a + h.bin_width_ps - tt) / sigma) - normal_cdf((a - tt) / sigma);
        h.counts[static_cast<std::size_t>(i)] += amount * p;
      }
    }
  };

  const double entry = src.pulse_epoch_ps;
  const double c0 = program.cross_fraction(entry);
  deposit(entry, scale * (1.0 - c0));
  double circulating = c0;
  for (int m = 1; m <= buf.max_round_trips; ++m) {
    circulating *= t_rt;
    const double c = program.cross_fraction(entry + m * buf.round_trip_time_ps);
    deposit(entry + m * buf.round_trip_time_ps, scale * circulating * c);
    circulating *= 1.0 - c;
  }

  const double dark_per_bin = det.dark_rate_hz * 1e-12 * h.bin_width_ps * static_cast<double>(n_pulses);
  for (auto& c : h.counts) c += dark_per_bin;
  return h;
}

RealHistogram to_real(const Histogram& h) {
  RealHistogram r;
  r.trigger_period_ps = h.trigger_period_ps;
  r.bin_width_ps = h.bin_width_ps;
  r.t0_ps = h.t0_ps;
  r.n_triggers = h.n_triggers;
  r.counts.assign(h.counts.begin(), h.counts.end());
  return r;
}

void add_into(RealHistogram& into, const RealHistogram& other) {
  if (into.counts.size() != other.counts.size() || into.bin_width_ps != other.bin_width_ps ||
      into.t0_ps != other.t0_ps) {
    throw ContractError("cannot add histograms on different grids");
  }
  for (std::size_t i = 0; i < into.counts.size(); ++i) into.counts[i] += other.counts[i];
}

RealHistogram correct_dead_time(const Histogram& h, double dead_time_ps) {
  if (!(dead_time_ps >= 0.0)) throw ContractError("dead time must be >= 0");
  RealHistogram out = to_real(h);
  if (dead_time_ps == 0.0) return out;
  const double period = h.trigger_period_ps;
  if (std::abs(h.window_end() - h.t0_ps - period) > 1e-6 * period) {
    throw AnalysisError("dead-time correction needs a histogram covering the full trigger period");
  }
  if (h.n_triggers == 0) throw AnalysisError("dead-time correction needs n_triggers > 0");

  const std::size_t n = h.counts.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + static_cast<double>(h.counts[i]);
  const double total = prefix[n];

  // Recorded events in [t0, x), extended periodically with linear interpolation inside bins.
  auto cumulative = [&](double x) {
    const double q = std::floor((x - h.t0_ps) / period);
    const double pos = (x - h.t0_ps - q * period) / h.bin_width_ps;
    auto i = std::min(static_cast<std::size_t>(pos), n - 1);
    const double frac = std::clamp(pos - static_cast<double>(i), 0.0, 1.0);
    return q * total + prefix[i] + frac * static_cast<double>(h.counts[i]);
  };

  const double nt = static_cast<double>(h.n_triggers);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = h.bin_centre(i);
    const double dead = (cumulative(t) - cumulative(t - dead_time_ps)) / nt;
    if (!(dead < 1.0)) throw AnalysisError("detector saturated: dead fraction >= 1");
    out.counts[i] /= 1.0 - dead;
  }
  return out;
}

template <class Count>
PeakShape measure_peak(const BasicHistogram<Count>& h, double centre_ps, double half_width_ps) {
  PeakShape s;
  double sx = 0.0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double d = cyclic_offset(h.bin_centre(i), centre_ps, h.trigger_period_ps);
    if (d < -half_width_ps || d >= half_width_ps) continue;
    const auto c = static_cast<double>(h.counts[i]);
    s.integral += c;
    sx += c * d;
  }
  if (!(s.integral > 0.0)) return s;
  const double mean = sx / s.integral;
  double sxx = 0.0;
  for (std::size_t i = 0; i < h.counts.size(); ++i) {
    const double d = cyclic_offset(h.bin_centre(i), centre_ps, h.trigger_period_ps);
    if (d < -half_width_ps || d >= half_width_ps) continue;
    sxx += static_cast<double>(h.counts[i]) * (d - mean) * (d - mean);
  }
  s.centroid_ps = centre_ps + mean;
  s.sigma_ps = std::sqrt(sxx / s.integral);
  return s;
}

template PeakShape measure_peak(const Histogram&, double, double);
template PeakShape measure_peak(const RealHistogram&, double, double);

ChiSquareResult poisson_chi_square(std::span<const std::uint64_t> frequencies, double mean) {
  if (!(mean >= 0.0)) throw ContractError("Poisson mean must be >= 0");
  double n_total = 0.0;
  for (auto f : frequencies) n_total += static_cast<double>(f);
  if (!(n_total > 0.0)) throw AnalysisError("no observations");

  struct Cell {
    double observed;
    double expected;
  };
  std::vector<Cell> cells;
  double pmf = std::exp(-mean);
  double cdf = 0.0;
  for (std::size_t n = 0; n < frequencies.size(); ++n) {
    if (n > 0) pmf *= mean / static_cast<double>(n);
    cdf += pmf;
    cells.push_back({static_cast<double>(frequencies[n]), n_total * pmf});
  }
  cells.push_back({0.0, n_total * std::max(0.0, 1.0 - cdf)});

  constexpr double kMinExpected = 5.0;
  while (cells.size() > 1 && cells.back().expected < kMinExpected) {
    const Cell last = cells.back();
    cells.pop_back();
    cells.back().observed += last.observed;
    cells.back().expected += last.expected;
  }
  while (cells.size() > 1 && cells.front().expected < kMinExpected) {
    const Cell first = cells.front();
    cells.erase(cells.begin());
    cells.front().observed += first.observed;
    cells.front().expected += first.expected;
  }

  ChiSquareResult r;
  for (const auto& c : cells) {
    if (c.expected > 0.0) r.statistic += (c.observed - c.expected) * (c.observed - c.expected) / c.expected;
  }
  r.dof = static_cast<int>(cells.size()) - 1;
  r.p_value = r.dof > 0 ? boost::math::gamma_q(0.5 * r.dof, 0.5 * r.statistic) : 1.0;
  return r;
}

void write_peaks_csv(std::ostream& os, const PeakSeries& series) {
  os << "k,raw_counts,normalized_amplitude\n";
  for (const auto& e : series.entries) {
    os << e.k << ',' << format_number(e.raw_counts) << ',' << format_number(e.amplitude) << '\n';
  }
}

PeakSeries read_peaks_csv(std::istream& is, Normalization mode) {
  std::vector<std::pair<int, double>> raw;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("k,", 0) == 0) continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 3) throw ConfigError("peak CSV rows need three columns");
    raw.emplace_back(static_cast<int>(parse_uint(f[0], "k")), parse_double(f[1], "raw_counts"));
  }
  return make_peak_series(std::move(raw), mode);
}

nlohmann::json to_json(const LossFit& fit) {
  return {{"slope_db_per_trip", fit.slope_db_per_trip},
          {"intercept_db", fit.intercept_db},
          {"residual_rms_db", fit.residual_rms_db},
          {"n_points", fit.n_points},
          {"warnings", fit.warnings}};
}

nlohmann::json to_json(const G2Result& g2) {
  return {{"g2", g2.g2},
          {"stderr", g2.std_error},
          {"n_coincidences", g2.n_coincidences},
          {"n_a", g2.n_a},
          {"n_b", g2.n_b},
          {"n_triggers", g2.n_triggers},
          {"error_model", "poisson_propagation"}};
}

}  // namespace spbuf::analysis
