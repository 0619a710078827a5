#include <doctest.h>

#include <cmath>
#include <limits>

#include "bmc/channels.hpp"
#include "bmc/errors.hpp"

using namespace bmc;

namespace {

// Sweep with a 100 ms lead-in at holding, then a step to v for `len` ms.
Sweep step_sweep(double hold, double v, double len) { return {{100.0, hold, hold}, {len, v, v}}; }

// First time after the step onset at which the current reaches half its final value.
double time_to_half_max(const ChannelParams& p, double v) {
  const double len = 3000.0;
  std::vector<double> t;
  for (double s = 100.0 + 0.01; s < 100.0 + len; s += 0.01) t.push_back(s);
  const auto r = simulate_sweep(p, step_sweep(-90.0, v, len), 0.01, t, -90.0);
  const double base = r.current.front(), top = r.current.back();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (r.current[i] - base >= 0.5 * (top - base)) return t[i] - 100.0;
  return std::numeric_limits<double>::infinity();
}

}  // namespace

TEST_CASE("kd rates") {
  const KdParams gt;
  const double v0 = gt.V_T + gt.th_alpha;  // -48 mV
  CHECK(kd_rates(v0, gt).alpha == doctest::Approx(0.16).epsilon(1e-12));
  // the series branch and the closed form agree just outside the switch
  for (double du : {-1e-6, 1e-6, -1e-3, 1e-3}) {
    const double u = du;
    const double direct = gt.R_alpha * u / (1.0 - std::exp(-u / gt.q_alpha));
    CHECK(kd_rates(v0 + du, gt).alpha == doctest::Approx(direct).epsilon(1e-9));
  }
  CHECK(kd_rates(gt.V_T + gt.th_beta, gt).beta == doctest::Approx(0.5).epsilon(1e-14));
  for (double v = -120.0; v <= 60.0; v += 0.25) {
    const auto r = kd_rates(v, gt);
    REQUIRE(r.alpha >= 0.0);
    REQUIRE(r.beta >= 0.0);
  }
}

TEST_CASE("ks kinetics") {
  const KsParams gt;
  const auto k = ks_kinetics(-35.0, gt);
  CHECK(k.p_inf == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(k.tau == doctest::Approx(4000.0 / 4.3).epsilon(1e-12));
  double prev = -1.0;
  for (double v = -120.0; v <= 60.0; v += 0.5) {
    const double p = ks_kinetics(v, gt).p_inf;
    REQUIRE(p > prev);
    prev = p;
  }
  KsParams printed = gt;
  printed.strict_printed_offset = true;
  CHECK(ks_kinetics(35.0, printed).tau == doctest::Approx(4000.0 / 4.3).epsilon(1e-12));
  CHECK(ks_kinetics(-35.0, printed).p_inf == doctest::Approx(0.5));
}

TEST_CASE("protocol set") {
  const auto ps = build_protocols();
  REQUIRE(ps.size() == 5);
  CHECK(ps[0].name == "activation");
  CHECK(ps[0].n_sweeps() == 12);
  CHECK(ps[1].n_sweeps() == 12);
  CHECK(ps[2].n_sweeps() == 12);
  CHECK(ps[3].n_sweeps() == 1);
  REQUIRE(ps[4].n_sweeps() == 4);
  for (const auto& sw : ps[4].sweeps) {
    int up = 0, down = 0;
    for (const auto& seg : sw) {
      up += seg.v_end > seg.v_start;
      down += seg.v_end < seg.v_start;
    }
    CHECK(up == 1);
    CHECK(down == 1);
  }
  CHECK(ps[0].sweeps.front()[1].v_start == -90.0);
  CHECK(ps[0].sweeps.back()[1].v_start == 60.0);
  for (const auto& p : ps) CHECK_NOTHROW(p.validate());
}

TEST_CASE("protocol text round trip and parse errors") {
  const auto ps = build_protocols();
  const auto back = parse_protocols(format_protocols(ps));
  REQUIRE(back.size() == ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    CHECK(back[i].name == ps[i].name);
    CHECK(back[i].dt == ps[i].dt);
    CHECK(back[i].holding_v == ps[i].holding_v);
    REQUIRE(back[i].sweeps.size() == ps[i].sweeps.size());
    for (std::size_t s = 0; s < ps[i].sweeps.size(); ++s)
      for (std::size_t k = 0; k < ps[i].sweeps[s].size(); ++k) {
        CHECK(back[i].sweeps[s][k].duration == ps[i].sweeps[s][k].duration);
        CHECK(back[i].sweeps[s][k].v_end == ps[i].sweeps[s][k].v_end);
      }
  }
  CHECK_THROWS_AS(parse_protocols("protocol a\nsweep\nsegment 1 0\nend\n"), InputError);
  CHECK_THROWS_AS(parse_protocols("protocol a\nsweep\nsegment 1 0 0\n"), InputError);
  CHECK_THROWS_AS(parse_protocols("segment 1 0 0\n"), InputError);
  CHECK_THROWS_AS(parse_protocols("protocol a\nprotocol b\nend\n"), InputError);
  CHECK_THROWS_AS(parse_protocols("protocol a\nsweep\nsegment 0 0 0\nend\n"), DomainError);
}

TEST_CASE("traces have 512 finite samples per sweep") {
  const auto ps = build_protocols();
  for (const ChannelParams& p : {ChannelParams{KdParams{}}, ChannelParams{KsParams{}}}) {
    const auto ts = simulate_all(p, ps);
    REQUIRE(ts.protocols.size() == 5);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      CHECK(ts.protocols[i].values.size() == static_cast<std::size_t>(ps[i].n_sweeps()) * kSamplesPerSweep);
      for (double v : ts.protocols[i].values) REQUIRE(std::isfinite(v));
    }
  }
}

TEST_CASE("zero driving force gives zero current") {
  VoltageProtocol flat{"flat", {{{500.0, -90.0, -90.0}}, {{200.0, -90.0, -90.0}, {300.0, -90.0, -90.0}}}, 0.025, -90.0};
  for (const ChannelParams& p : {ChannelParams{KdParams{}}, ChannelParams{KsParams{}}})
    for (double v : simulate_clamp(p, flat).values) CHECK(v == 0.0);
}

TEST_CASE("gates stay in [0, 1] for every protocol and prior corner") {
  const auto ps = build_protocols();
  for (int m = 0; m < 2; ++m) {
    const auto [lo, hi] = channel_prior_bounds(m);
    for (const auto& free : {lo, hi}) {
      const ChannelParams p = channel_from_free(m, free);
      for (const auto& proto : ps)
        for (const auto& sw : proto.sweeps) {
          std::vector<double> gate;
          const auto times = subsample_times(100.0);
          simulate_sweep(p, sw, proto.dt, times, proto.holding_v, &gate);
          REQUIRE(!gate.empty());
          for (double g : gate) {
            REQUIRE(g >= 0.0);
            REQUIRE(g <= 1.0);
          }
        }
    }
  }
}

TEST_CASE("kd gate relaxes to its steady state") {
  const KdParams gt;
  const auto r = kd_rates(0.0, gt);
  const double tau = 1.0 / (r.alpha + r.beta);
  const std::vector<double> t{100.0 + 10 * tau};
  const auto out = simulate_sweep(gt, step_sweep(-90.0, 0.0, 20 * tau), 0.025, t, -90.0);
  CHECK(std::abs(out.gate[0] - r.alpha / (r.alpha + r.beta)) < 1e-4);
}

TEST_CASE("halving dt changes traces by less than 1e-3") {
  auto ps = build_protocols();
  auto fine = ps;
  for (auto& p : fine) p.dt *= 0.5;
  for (const ChannelParams& p : {ChannelParams{KdParams{}}, ChannelParams{KsParams{}}}) {
    const auto a = simulate_all(p, ps), b = simulate_all(p, fine);
    double worst = 0.0;
    for (std::size_t i = 0; i < ps.size(); ++i)
      for (std::size_t j = 0; j < a.protocols[i].values.size(); ++j)
        worst = std::max(worst, std::abs(a.protocols[i].values[j] - b.protocols[i].values[j]));
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("kd activation is monotone in the step amplitude") {
  const auto ps = build_protocols();
  const auto tr = simulate_clamp(KdParams{}, ps[0]);
  // last sample of the step itself lies just before the tail begins
  const double total = 100.0 + 500.0 + 100.0;
  const auto times = subsample_times(total);
  std::size_t idx = 0;
  for (std::size_t j = 0; j < times.size(); ++j)
    if (times[j] < 600.0) idx = j;
  double prev = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < 12; ++s) {
    const double v = tr.values[static_cast<std::size_t>(s) * kSamplesPerSweep + idx];
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("ks rises much more slowly than kd") {
  const double kd = time_to_half_max(KdParams{}, 60.0);
  const double ks = time_to_half_max(KsParams{}, 60.0);
  CAPTURE(kd);
  CAPTURE(ks);
  CHECK(ks > 5.0 * kd);
}

TEST_CASE("non-finite voltages raise a divergence error naming the sweep") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  VoltageProtocol bad{"bad", {{{10.0, -90.0, -90.0}}, {{10.0, nan, nan}}}, 0.025, -90.0};
  try {
    simulate_clamp(KdParams{}, bad);
    FAIL("expected a divergence error");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("sweep 1") != std::string::npos);
  }
}

TEST_CASE("prior sampling respects the bounds") {
  Rng rng(3);
  for (int m = 0; m < 2; ++m) {
    const auto [lo, hi] = channel_prior_bounds(m);
    for (std::size_t i = 0; i < lo.size(); ++i) CHECK(lo[i] < hi[i]);
    for (int k = 0; k < 1000; ++k) {
      const auto v = sample_channel_prior(m, rng);
      for (std::size_t i = 0; i < v.size(); ++i) {
        REQUIRE(v[i] >= lo[i]);
        REQUIRE(v[i] <= hi[i]);
      }
    }
  }
  CHECK(channel_prior_bounds(0).first.size() == 8);
  CHECK(channel_prior_bounds(1).first.size() == 5);
  CHECK_THROWS_AS(channel_from_free(2, std::vector<double>(5, 1.0)), InputError);
  CHECK_THROWS_AS(KdParams::from_free(std::vector<double>(5, 1.0)), InputError);
}
