#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "spbuf/control.hpp"
#include "spbuf/optics.hpp"

using namespace spbuf;
using namespace spbuf::control;

namespace {

const optics::BufferModel kBuf{};
const optics::SourceModel kSrc{};

DriveWaveform step_input(double step_ps, double len_ps, double t_step, double v) {
  DriveWaveform w;
  w.v_pi_volts = v;
  w.sample_step_ps = step_ps;
  const auto n = static_cast<std::size_t>(std::llround(len_ps / step_ps));
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) * step_ps;
    w.samples.push_back({t, t >= t_step ? v : 0.0});
  }
  return w;
}

double crossing_time(const DriveWaveform& w, double level) {
  for (std::size_t i = 1; i < w.samples.size(); ++i) {
    const auto& a = w.samples[i - 1];
    const auto& b = w.samples[i];
    if (a.volts < level && b.volts >= level) {
      return a.time_ps + (level - a.volts) / (b.volts - a.volts) * (b.time_ps - a.time_ps);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

TEST_CASE("build_schedule") {
  const auto s0 = build_schedule(0, kBuf, kSrc);
  CHECK(s0.release_time_ps == s0.capture_time_ps);
  CHECK(s0.gate_window_ps == 50.0);
  CHECK(s0.capture_time_ps == kSrc.pulse_epoch_ps);

  const auto s14 = build_schedule(14, kBuf, kSrc);
  CHECK(s14.release_time_ps - s14.capture_time_ps == 1400.0);

  CHECK_THROWS_AS(build_schedule(120, kBuf, kSrc), CapacityError);

  optics::BufferModel deep = kBuf;
  deep.max_round_trips = 200;
  CHECK_THROWS_AS(build_schedule(100, deep, kSrc), CollisionError);
  CHECK_NOTHROW(build_schedule(99, deep, kSrc, 10.0, 20.0));
}

TEST_CASE("lattice property of every valid schedule") {
  for (int n = 0; n <= kBuf.max_round_trips; ++n) {
    const auto s = build_schedule(n, kBuf, kSrc);
    CHECK(std::fmod(s.release_time_ps - s.capture_time_ps, kBuf.round_trip_time_ps) == 0.0);
    CHECK(validate_schedule(s, 10.0, kSrc, kBuf).clean());
  }
}

TEST_CASE("trapezoid geometry") {
  const auto s = build_schedule(3, kBuf, kSrc);
  const auto w = synthesize_waveform(s, kBuf, 10.0, 0.5);
  CHECK(w.uniform_grid());
  CHECK(w.within_range(0.0));
  CHECK(w.samples.front().time_ps == 0.0);
  CHECK(w.samples.back().time_ps == kSrc.repetition_period_ps);

  double first = -1.0, last = -1.0;
  for (const auto& smp : w.samples) {
    if (smp.time_ps > 1200.0) break;
    if (smp.volts == kBuf.v_pi_volts) {
      if (first < 0.0) first = smp.time_ps;
      last = smp.time_ps;
    }
  }
  CHECK(last - first == doctest::Approx(40.0));
  CHECK(first == doctest::Approx(980.0));
  CHECK(w.value_at(1000.0) == kBuf.v_pi_volts);
  CHECK(w.value_at(1300.0) == kBuf.v_pi_volts);
  CHECK(w.value_at(1150.0) == 0.0);
  CHECK(w.value_at(975.0) == doctest::Approx(0.5 * kBuf.v_pi_volts));
}

TEST_CASE("fast edges approach the ideal rectangle") {
  const auto s = build_schedule(2, kBuf, kSrc);
  const auto rect = ControlProgram::rectangular(s, kBuf);
  const auto w = synthesize_waveform(s, kBuf, 0.04, 0.01);
  int mismatched = 0;
  for (double t = 900.0; t < 1300.0; t += 0.37) {
    if (std::abs(w.value_at(t) - rect.drive_at(t)) > 1e-9) ++mismatched;
  }
  CHECK(mismatched <= 2);
  CHECK(w.value_at(1000.0) == kBuf.v_pi_volts);
}

TEST_CASE("waveform errors") {
  const auto s = build_schedule(2, kBuf, kSrc);
  CHECK_THROWS_AS(synthesize_waveform(s, kBuf, 60.0), WaveformError);
  CHECK_THROWS_AS(synthesize_waveform(s, kBuf, 0.0), WaveformError);
  CHECK_THROWS_AS(synthesize_waveform(s, kBuf, 10.0, 5.0), WaveformError);
}

TEST_CASE("N = 0 has no gates") {
  const auto s = build_schedule(0, kBuf, kSrc);
  const auto w = synthesize_waveform(s, kBuf, 10.0);
  CHECK(std::all_of(w.samples.begin(), w.samples.end(), [](const WaveSample& x) { return x.volts == 0.0; }));
  const auto p = ControlProgram::rectangular(s, kBuf);
  CHECK(p.drive_at(1000.0) == 0.0);
}

TEST_CASE("single-pole bandwidth limit") {
  SUBCASE("10-90 rise time at 40 GHz") {
    const auto out = apply_bandwidth(step_input(0.5, 200.0, 50.0, 1.0), 40.0);
    const double rise = crossing_time(out, 0.9) - crossing_time(out, 0.1);
    CHECK(rise == doctest::Approx(8.742478814151497).epsilon(0.05));
  }
  SUBCASE("very wide bandwidth is all-pass") {
    const auto s = build_schedule(4, kBuf, kSrc);
    const auto in = synthesize_waveform(s, kBuf, 10.0);
    const auto out = apply_bandwidth(in, 1e6);
    for (std::size_t i = 0; i < in.samples.size(); ++i) {
      CHECK(out.samples[i].volts == doctest::Approx(in.samples[i].volts).epsilon(1e-6).scale(kBuf.v_pi_volts));
    }
  }
  SUBCASE("unity DC gain") {
    DriveWaveform dc = step_input(0.5, 100.0, 0.0, 4.0);
    const auto out = apply_bandwidth(dc, 40.0);
    for (const auto& smp : out.samples) CHECK(smp.volts == doctest::Approx(4.0));
  }
  SUBCASE("no overshoot") {
    const auto s = build_schedule(6, kBuf, kSrc);
    const auto out = apply_bandwidth(synthesize_waveform(s, kBuf, 10.0), 40.0);
    CHECK(out.within_range(0.0));
  }
  SUBCASE("non-uniform grid is rejected") {
    DriveWaveform w = step_input(0.5, 10.0, 5.0, 1.0);
    w.samples[3].time_ps += 0.1;
    CHECK_THROWS_AS(apply_bandwidth(w, 40.0), ContractError);
  }
}

TEST_CASE("switch transfer") {
  const double inf = std::numeric_limits<double>::infinity();
  auto t = switch_transmission(0.0, 4.0, inf);
  CHECK(t.cross == 0.0);
  CHECK(t.bar == 1.0);
  t = switch_transmission(4.0, 4.0, inf);
  CHECK(t.cross == doctest::Approx(1.0));
  CHECK(t.bar == doctest::Approx(0.0));
  t = switch_transmission(2.0, 4.0, inf);
  CHECK(t.cross == doctest::Approx(0.5));
  t = switch_transmission(0.0, 4.0, 20.0);
  CHECK(t.cross == doctest::Approx(0.01));
  t = switch_transmission(4.0, 4.0, 20.0);
  CHECK(t.bar == doctest::Approx(0.01));
  for (double v = -10.0; v <= 10.0; v += 0.173) {
    for (double ext : {inf, 30.0, 10.0, 3.0}) {
      const auto p = switch_transmission(v, 4.0, ext);
      CHECK(p.cross + p.bar == 1.0);
    }
  }
}

TEST_CASE("validate_program reports each rule") {
  SUBCASE("constructed schedules are clean") {
    const auto p = ControlProgram::from_settings(ProgramSettings{}, kBuf, kSrc);
    CHECK(validate_program(p, kSrc, kBuf).clean());
  }
  SUBCASE("off-lattice release") {
    auto s = build_schedule(1, kBuf, kSrc);
    s.release_time_ps = s.capture_time_ps + 150.0;
    CHECK(validate_schedule(s, 10.0, kSrc, kBuf).mentions("off-lattice release"));
  }
  SUBCASE("window exceeds round trip") {
    ProgramSettings st;
    st.gate_window_ps = 120.0;
    CHECK(validate_program(st, kSrc, kBuf).mentions("window exceeds round trip"));
  }
  SUBCASE("edge slower than window") {
    ProgramSettings st;
    st.edge_time_ps = 60.0;
    CHECK(validate_program(st, kSrc, kBuf).mentions("edge slower than window"));
  }
  SUBCASE("capacity and collision") {
    ProgramSettings st;
    st.hold_round_trips = 15;
    CHECK(validate_program(st, kSrc, kBuf).mentions("capacity exceeded"));
    optics::BufferModel deep = kBuf;
    deep.max_round_trips = 200;
    st.hold_round_trips = 100;
    CHECK(validate_program(st, kSrc, deep).mentions("collision with next pulse"));
  }
}

TEST_CASE("program settings JSON round trip") {
  ProgramSettings st;
  st.hold_round_trips = 7;
  st.f3db_ghz = 35.0;
  nlohmann::json j;
  to_json(j, st);
  const auto back = program_settings_from_json(j);
  CHECK(back.hold_round_trips == 7);
  CHECK(back.f3db_ghz == std::optional<double>(35.0));
  CHECK(back.edge_time_ps == st.edge_time_ps);
  j["bogus"] = 1;
  CHECK_THROWS_AS(program_settings_from_json(j), ConfigError);
}

TEST_CASE("waveform CSV round trip") {
  const auto s = build_schedule(1, kBuf, kSrc);
  const auto w = apply_bandwidth(synthesize_waveform(s, kBuf, 10.0), 40.0);
  std::stringstream ss;
  write_waveform_csv(ss, w);
  CHECK(ss.str().rfind("time_ps,volts\n", 0) == 0);
  const auto back = read_waveform_csv(ss, kBuf.v_pi_volts);
  REQUIRE(back.samples.size() == w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); i += 97) {
    CHECK(back.samples[i].volts == w.samples[i].volts);
    CHECK(back.samples[i].time_ps == w.samples[i].time_ps);
  }
}

TEST_CASE("shaped program stores in the same round trip as the ideal one") {
  // Dominant exit peak per program, compared with the rectangular program.
  for (int n = 0; n <= kBuf.max_round_trips; ++n) {
    const auto sched = build_schedule(n, kBuf, kSrc);
    const auto ideal = ControlProgram::rectangular(sched, kBuf);
    const auto real = ControlProgram::shaped(sched, kBuf, 10.0, kBuf.eo_bandwidth_ghz);
    auto dominant = [&](const ControlProgram& p) {
      const auto run = optics::run_experiment(optics::SourceModel{}, kBuf, p, 20'000, 17);
      std::vector<int> hits(kBuf.max_round_trips + 1, 0);
      for (const auto& r : run.records) ++hits[r.round_trips_completed];
      return std::max_element(hits.begin(), hits.end()) - hits.begin();
    };
    CHECK(dominant(real) == dominant(ideal));
    CHECK(dominant(real) == n);
  }
}
