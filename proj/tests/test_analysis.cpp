#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "spbuf/analysis.hpp"
#include "spbuf/control.hpp"
#include "spbuf/pipeline.hpp"

using namespace spbuf;
using namespace spbuf::analysis;
using detection::Channel;
using detection::DetectionEvent;
using detection::Histogram;
using detection::HistogramSpec;

namespace {

const HistogramSpec kFullPeriod{10000.0, 1.0, 0.0, 10000.0};

control::ControlProgram rect(int n, const optics::BufferModel& buf, const optics::SourceModel& src) {
  return control::ControlProgram::rectangular(control::build_schedule(n, buf, src), buf);
}

detection::DetectorModel ideal_detector() {
  detection::DetectorModel d;
  d.efficiency = 1.0;
  d.jitter_sigma_ps = 0.0;
  d.dark_rate_hz = 0.0;
  d.dead_time_ps = 0.0;
  return d;
}

PeakSeries geometric(double db_per_trip, int k_max, double scale = 1.0) {
  std::vector<std::pair<int, double>> raw;
  for (int k = 0; k <= k_max; ++k) raw.emplace_back(k, scale * std::pow(10.0, -db_per_trip * k / 10.0));
  return make_peak_series(raw, Normalization::MaxPeak);
}

}  // namespace

TEST_CASE("extract_peaks") {
  const optics::BufferModel buf;
  SUBCASE("single peak normalizes to one") {
    auto h = detection::make_histogram(kFullPeriod, 1);
    h.counts[1100] = 500;
    h.counts[1101] = 500;
    h.counts[5000] = 3;
    const auto s = extract_peaks(h, buf, 1000.0, 5, 40.0);
    REQUIRE(s.entries.size() == 6);
    CHECK(s.entries[1].amplitude == 1.0);
    CHECK(s.entries[1].raw_counts == 1000.0);
    for (int k : {0, 2, 3, 4, 5}) CHECK(s.entries[k].amplitude == 0.0);
  }
  SUBCASE("constructed geometric peaks") {
    auto h = detection::make_histogram(kFullPeriod, 1);
    for (int k = 0; k <= 5; ++k) {
      h.counts[static_cast<std::size_t>(1000 + 100 * k)] = static_cast<std::uint64_t>(std::llround(1e6 * std::pow(10.0, -0.074 * k)));
    }
    const auto s = extract_peaks(h, buf, 1000.0, 5, 40.0, Normalization::FirstPeak);
    for (int k = 0; k <= 5; ++k) {
      CHECK(s.entries[k].amplitude / s.entries[0].amplitude == doctest::Approx(std::pow(10.0, -0.074 * k)).epsilon(1e-4));
    }
  }
  SUBCASE("gate centre folds into the window") {
    auto h = detection::make_histogram(kFullPeriod, 1);
    h.counts[9990] = 7;
    h.counts[5] = 3;
    CHECK(gate_integral(h, 10000.0, 20.0) == 10.0);
    CHECK(gate_integral(h, 0.0, 20.0) == 10.0);
  }
  SUBCASE("errors") {
    auto h = detection::make_histogram(kFullPeriod, 1);
    CHECK_THROWS_AS(extract_peaks(h, buf, 1000.0, 5, 40.0), AnalysisError);
    h.counts[1100] = 1;
    CHECK_THROWS_AS(extract_peaks(h, buf, 1000.0, 5, 60.0), ConfigError);
  }
}

TEST_CASE("fit_loss") {
  SUBCASE("exact geometric series") {
    const auto fit = fit_loss(geometric(0.74, 5));
    CHECK(fit.slope_db_per_trip == doctest::Approx(0.74).epsilon(1e-12));
    CHECK(fit.residual_rms_db == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
    CHECK(fit.n_points == 5);
  }
  SUBCASE("flat series is lossless") {
    std::vector<std::pair<int, double>> raw{{1, 5.0}, {2, 5.0}, {3, 5.0}};
    CHECK(fit_loss(make_peak_series(raw, Normalization::MaxPeak)).slope_db_per_trip == doctest::Approx(0.0).scale(1.0));
  }
  SUBCASE("scale invariance") {
    const double a = fit_loss(geometric(1.3, 6, 1.0)).slope_db_per_trip;
    const double b = fit_loss(geometric(1.3, 6, 12345.0)).slope_db_per_trip;
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    std::vector<std::pair<int, double>> noisy{{1, 90.0}, {2, 81.0}, {3, 66.0}, {4, 60.0}};
    auto scaled = noisy;
    for (auto& [k, c] : scaled) c *= 7.5;
    CHECK(fit_loss(make_peak_series(noisy, Normalization::FirstPeak)).slope_db_per_trip ==
          doctest::Approx(fit_loss(make_peak_series(scaled, Normalization::MaxPeak)).slope_db_per_trip).epsilon(1e-12));
  }
  SUBCASE("zero peaks are skipped with a warning") {
    std::vector<std::pair<int, double>> raw{{1, 100.0}, {2, 0.0}, {3, 100.0 * std::pow(10.0, -0.148)}};
    const auto fit = fit_loss(make_peak_series(raw, Normalization::MaxPeak));
    CHECK(fit.n_points == 2);
    CHECK(fit.warnings.size() == 1);
    CHECK(fit.slope_db_per_trip == doctest::Approx(0.74));
  }
  SUBCASE("too few points") {
    std::vector<std::pair<int, double>> raw{{0, 10.0}};
    CHECK_THROWS_AS(fit_loss(make_peak_series(raw, Normalization::MaxPeak)), AnalysisError);
    std::vector<std::pair<int, double>> two{{0, 10.0}, {1, 9.0}};
    CHECK_THROWS_AS(fit_loss(make_peak_series(two, Normalization::MaxPeak)), AnalysisError);
    CHECK(fit_loss(make_peak_series(two, Normalization::MaxPeak), {0, false}).n_points == 2);
  }
}

TEST_CASE("g2 arithmetic") {
  const auto r = g2_from_counts({100, 1000, 2000}, 20000);
  CHECK(r.g2 == doctest::Approx(1.0));
  CHECK(r.std_error == doctest::Approx(std::sqrt(0.01 + 0.001 + 0.0005)));

  const auto zero = g2_from_counts({0, 1000, 2000}, 20000);
  CHECK(zero.g2 == 0.0);
  CHECK(zero.std_error == doctest::Approx(0.01 * std::sqrt(1.0 + 0.001 + 0.0005)));

  CHECK_THROWS_AS(g2_from_counts({0, 0, 10}, 100), AnalysisError);
}

TEST_CASE("coincidence counting") {
  const Gate gate{1450.0, 1550.0};
  std::vector<DetectionEvent> a{{Channel::A, 1500.0}, {Channel::A, 11500.0}, {Channel::A, 21500.0}, {Channel::A, 31000.0}};
  std::vector<DetectionEvent> b{{Channel::B, 1490.0}, {Channel::B, 21460.0}, {Channel::B, 31500.0}};
  const auto r = estimate_g2(a, b, 10000.0, gate, 4);
  CHECK(r.n_a == 3);
  CHECK(r.n_b == 3);
  CHECK(r.n_coincidences == 2);
  CHECK(r.g2 == doctest::Approx(2.0 * 4 / 9.0));

  const auto swapped = estimate_g2(b, a, 10000.0, gate, 4);
  CHECK(swapped.g2 == r.g2);
  CHECK(swapped.std_error == r.std_error);
}

TEST_CASE("storage gate") {
  const auto g = storage_gate(1000.0, 5, optics::BufferModel{}, 40.0);
  CHECK(g.start_ps == 1460.0);
  CHECK(g.end_ps == 1540.0);
}

TEST_CASE("antibunching through the full chain") {
  optics::BufferModel buf;
  optics::SourceModel src;
  src.kind = optics::SourceKind::SingleFock;
  src.fock_n = 1;
  cli::AcquisitionOptions opt;
  opt.hbt = true;
  opt.histogram = kFullPeriod;
  opt.g2_gate = storage_gate(1000.0, 5, buf, 40.0);

  SUBCASE("single photons never coincide") {
    auto det = detection::DetectorModel{};
    det.dark_rate_hz = 0.0;
    const auto acq = cli::acquire(src, buf, rect(5, buf, src), det, 200'000, 1, opt);
    const auto g = g2_from_counts(acq.g2, acq.n_triggers);
    CHECK(acq.g2.n_a > 0);
    CHECK(g.g2 == 0.0);
  }
  SUBCASE("two-photon Fock states give one half") {
    optics::BufferModel lossless = buf;
    lossless.round_trip_loss_db = lossless.input_coupling_loss_db = lossless.output_coupling_loss_db = 0.0;
    src.fock_n = 2;
    const auto acq = cli::acquire(src, lossless, rect(5, lossless, src), ideal_detector(), 1'000'000, 1, opt);
    const auto g = g2_from_counts(acq.g2, acq.n_triggers);
    CHECK(acq.g2.n_a + acq.g2.n_b == 2'000'000);
    CHECK(g.g2 == doctest::Approx(0.5).epsilon(0.02));
  }
}

TEST_CASE("expected histogram oracle") {
  optics::BufferModel buf;
  optics::SourceModel src;
  detection::DetectorModel det;
  det.dead_time_ps = 0.0;

  SUBCASE("vacuum without dark counts is empty") {
    optics::SourceModel vac = src;
    vac.mean_photon_number = 0.0;
    detection::DetectorModel quiet = det;
    quiet.dark_rate_hz = 0.0;
    const auto h = expected_histogram(vac, buf, rect(3, buf, vac), quiet, 1'000'000, kFullPeriod);
    CHECK(h.total() == 0.0);
  }
  SUBCASE("dark floor") {
    optics::SourceModel vac = src;
    vac.mean_photon_number = 0.0;
    const auto h = expected_histogram(vac, buf, rect(3, buf, vac), det, 1'000'000, kFullPeriod);
    for (std::size_t i = 0; i < h.counts.size(); i += 123) CHECK(h.counts[i] == doctest::Approx(1e-4));
  }
  SUBCASE("peak ratios follow the per-trip loss") {
    double first = 0.0;
    for (int k = 0; k <= 5; ++k) {
      detection::DetectorModel quiet = det;
      quiet.dark_rate_hz = 0.0;
      const auto h = expected_histogram(src, buf, rect(k, buf, src), quiet, 1'000'000, kFullPeriod);
      const double peak = gate_integral(h, 1000.0 + 100.0 * k, 50.0);
      if (k == 0) first = peak;
      CHECK(peak / first == doctest::Approx(std::pow(10.0, -0.074 * k)).epsilon(1e-6));
    }
    const double expect0 = 1e6 * 0.1 * std::pow(10.0, -0.546) * 0.8 * std::erf(50.0 / (15.0 * std::sqrt(2.0)));
    CHECK(first == doctest::Approx(expect0).epsilon(1e-4));
  }
  SUBCASE("finite extinction adds leakage peaks that the Monte Carlo reproduces") {
    optics::BufferModel leaky = buf;
    leaky.switch_extinction_db = 15.0;
    optics::SourceModel bright = src;
    bright.mean_photon_number = 0.5;
    const auto prog = rect(4, leaky, bright);
    const std::uint64_t n = 400'000;
    const auto expect = expected_histogram(bright, leaky, prog, det, n, kFullPeriod);
    cli::AcquisitionOptions opt;
    opt.histogram = kFullPeriod;
    const auto acq = cli::acquire(bright, leaky, prog, det, n, 3, opt);
    for (int k = 0; k <= leaky.max_round_trips; ++k) {
      const double e = gate_integral(expect, 1000.0 + 100.0 * k, 40.0);
      const double o = gate_integral(acq.hist_a, 1000.0 + 100.0 * k, 40.0);
      CHECK(std::abs(o - e) <= 3.0 * std::sqrt(std::max(e, 1.0)));
    }
    CHECK(gate_integral(expect, 1100.0, 40.0) > 10.0);
  }
  SUBCASE("shaped programs are unsupported") {
    const auto shaped = control::ControlProgram::shaped(control::build_schedule(2, buf, src), buf, 10.0, 40.0);
    CHECK_THROWS_AS(expected_histogram(src, buf, shaped, det, 10, kFullPeriod), AnalysisError);
  }
}

TEST_CASE("dead-time correction recovers unbiased peak ratios") {
  optics::BufferModel buf;
  optics::SourceModel src;
  src.mean_photon_number = 0.5;
  detection::DetectorModel with_dead;
  with_dead.dead_time_ps = 50000.0;
  cli::AcquisitionOptions opt;
  opt.histogram = kFullPeriod;
  const std::uint64_t n = 500'000;
  const auto prog = rect(2, buf, src);
  const auto acq = cli::acquire(src, buf, prog, with_dead, n, 5, opt);
  detection::DetectorModel live = with_dead;
  live.dead_time_ps = 0.0;
  const double truth = gate_integral(expected_histogram(src, buf, prog, live, n, kFullPeriod), 1200.0, 40.0);
  const double raw = gate_integral(acq.hist_a, 1200.0, 40.0);
  const double fixed = gate_integral(correct_dead_time(acq.hist_a, with_dead.dead_time_ps), 1200.0, 40.0);
  CHECK(raw < 0.97 * truth);
  CHECK(fixed == doctest::Approx(truth).epsilon(0.01));
}

TEST_CASE("Poisson chi-square") {
  std::mt19937_64 g(12);
  std::poisson_distribution<int> pois(0.7);
  std::vector<std::uint64_t> freq(20, 0);
  for (int i = 0; i < 200'000; ++i) ++freq[static_cast<std::size_t>(pois(g))];
  const auto good = poisson_chi_square(freq, 0.7);
  CHECK(good.p_value > 0.01);
  CHECK(good.dof >= 2);

  std::vector<std::uint64_t> ones{0, 200'000};
  CHECK(poisson_chi_square(ones, 1.0).p_value < 1e-10);
}

TEST_CASE("peak measurement") {
  auto h = detection::make_histogram(kFullPeriod, 1);
  h.counts[1499] = 10;
  h.counts[1501] = 10;
  const auto s = measure_peak(h, 1500.0, 20.0);
  CHECK(s.integral == 20.0);
  CHECK(s.centroid_ps == doctest::Approx(1500.5));
  CHECK(s.sigma_ps == doctest::Approx(1.0));
}

TEST_CASE("serialization") {
  const auto series = geometric(0.74, 3);
  std::stringstream ss;
  write_peaks_csv(ss, series);
  CHECK(ss.str().rfind("k,raw_counts,normalized_amplitude\n0,1,1\n", 0) == 0);
  const auto back = read_peaks_csv(ss);
  REQUIRE(back.entries.size() == 4);
  CHECK(back.entries[3].amplitude == series.entries[3].amplitude);

  const auto fit = to_json(fit_loss(series));
  CHECK(fit.contains("slope_db_per_trip"));
  CHECK(fit.contains("residual_rms_db"));
  const auto g = to_json(g2_from_counts({10, 100, 100}, 1000));
  CHECK(g["stderr"].get<double>() > 0.0);
  CHECK(g["error_model"] == "poisson_propagation");
  CHECK(to_string(Normalization::FirstPeak) == "first_peak");
}
