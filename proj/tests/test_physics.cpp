#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "botda/baselines.hpp"
#include "botda/errors.hpp"
#include "botda/physics.hpp"

using namespace botda;

namespace {

constexpr double kPi = std::numbers::pi;

FiberProfile uniform_fiber(double length = 54.0, double bfs = 10.85e9) {
  return FiberProfile::uniform(length, bfs, 30e6, 1.0, PhysicsConstants{});
}

// Closed-form on-resonance plateau: sum_{N=1..n} (1 - q^(2N-1)) / (2r),
// q = exp(-r delta), scaled so that the 40 ns plateau is 1.
double plateau_oracle(double pulse_s) {
  const double r = kPi * 30e6;
  const double delta = 0.01 / 2e8;
  const double q = std::exp(-r * delta);
  auto sum = [&](double n) { return n - q * (1.0 - std::pow(q, 2.0 * n)) / (1.0 - q * q); };
  const double n = std::floor((pulse_s / delta + 1.0) / 2.0 - 1e-9);
  return sum(n) / sum(400.0);
}

double max_row(const BgsFrame& f, std::size_t col) {
  double best = -1e300;
  for (std::size_t r = 0; r < f.rows(); ++r) best = std::max(best, f.at(r, col));
  return best;
}

}  // namespace

TEST_CASE("detuning parameter on resonance is real") {
  const auto g = detuning_parameter(10.85e9, 10.85e9, 30e6);
  CHECK(g.real() == doctest::Approx(kPi * 30e6).epsilon(1e-14));
  CHECK(g.imag() == 0.0);
  CHECK(1.0 / g.real() == doctest::Approx(10.61e-9).epsilon(1e-3));
}

TEST_CASE("detuning parameter off resonance matches complex arithmetic") {
  const double vb = 10.85e9;
  const double v = 10.84e9;
  const double dv = 30e6;
  const std::complex<double> i(0.0, 1.0);
  const std::complex<double> oracle = i * kPi * (vb * vb - v * v - i * v * dv) / v;
  const auto g = detuning_parameter(v, vb, dv);
  CHECK(g.real() == doctest::Approx(oracle.real()).epsilon(1e-12));
  CHECK(g.imag() == doctest::Approx(oracle.imag()).epsilon(1e-12));
  CHECK(g.imag() == doctest::Approx(kPi * (vb * vb - v * v) / v).epsilon(1e-12));
}

TEST_CASE("detuning parameter rejects non-positive arguments") {
  CHECK_THROWS_AS(detuning_parameter(0.0, 10.85e9, 30e6), DomainError);
  CHECK_THROWS_AS(detuning_parameter(10.85e9, -1.0, 30e6), DomainError);
  CHECK_THROWS_AS(detuning_parameter(10.85e9, 10.85e9, 0.0), DomainError);
}

TEST_CASE("unit gain follows the gated transient") {
  const PhysicsConstants c;
  const FiberProfile p = uniform_fiber(2.0);
  const PumpPulse pulse{1e-6};
  const std::size_t unit = 50;
  const double arrival = (static_cast<double>(unit) + 1.0) * c.unit_length / c.group_velocity;
  const double v = 10.85e9;

  CHECK(unit_gain(unit, 0.5 * arrival, v, p, pulse, c) == 0.0);

  const double r = kPi * 30e6;
  const double steady = c.unit_length / (2.0 * r) * calibration_constant(c);
  CHECK(unit_gain(unit, arrival + 900e-9, v, p, pulse, c) == doctest::Approx(steady).epsilon(1e-12));
  CHECK(unit_gain(unit, arrival + 1.0 / r, v, p, pulse, c) ==
        doctest::Approx((1.0 - std::exp(-1.0)) * steady).epsilon(1e-12));
  CHECK(unit_gain(unit, arrival + 1.5e-6, v, p, pulse, c) == 0.0);
}

TEST_CASE("a pulse shorter than two unit transits gives an all-zero trace") {
  const auto t = trace_at_frequency(uniform_fiber(5.0), PumpPulse{0.04e-9}, 10.85e9, PhysicsConstants{});
  CHECK(std::all_of(t.begin(), t.end(), [](double x) { return x == 0.0; }));
}

TEST_CASE("uniform fiber plateau equals the closed-form steady sum") {
  for (double width : {20e-9, 40e-9, 50e-9}) {
    const auto t = trace_at_frequency(uniform_fiber(), PumpPulse{width}, 10.85e9, PhysicsConstants{});
    REQUIRE(t.size() == 540);
    CHECK(t[300] == doctest::Approx(plateau_oracle(width)).epsilon(1e-9));
    CHECK(t[300] == doctest::Approx(t[400]).epsilon(1e-12));
  }
  CHECK(plateau_oracle(40e-9) == doctest::Approx(1.0));
}

TEST_CASE("a section shorter than the pulse loses contrast") {
  const PhysicsConstants c;
  const std::vector<FiberSection> sections{{30.0, 10.84e9, 30e6, 1.0}, {0.5, 10.86e9, 30e6, 1.0}, {23.5, 10.84e9, 30e6, 1.0}};
  const BgsFrame f = simulate_bgs(FiberProfile::from_sections(sections, c), PumpPulse{40e-9}, SweepGrid{}, c);
  const LcfResult fit = lcf_trace(f);
  double peak = 0.0;
  for (std::size_t k = 295; k < 350; ++k) peak = std::max(peak, fit.trace.values[k]);
  CHECK(peak - 10.84e9 > 0.0);
  CHECK(peak - 10.84e9 < 0.5 * 20e6);
}

TEST_CASE("uniform fiber spectra peak at the BFS") {
  const BgsFrame f = simulate_bgs(uniform_fiber(54.0, 10.85e9), PumpPulse{40e-9}, SweepGrid{}, PhysicsConstants{});
  CHECK(f.rows() == 71);
  CHECK(f.width == 540);
  for (std::size_t col : {100u, 270u, 500u}) {
    std::size_t arg = 0;
    for (std::size_t r = 0; r < f.rows(); ++r) {
      if (f.at(r, col) > f.at(arg, col)) arg = r;
    }
    CHECK(f.sweep.frequency(static_cast<int>(arg)) == doctest::Approx(10.85e9));
    CHECK(f.at(arg, col) == doctest::Approx(max_row(f, col)));
  }
}

TEST_CASE("simulate_bgs rejects a sweep that does not cover the fiber") {
  SweepGrid sweep;
  sweep.start = 10.86e9;
  CHECK_THROWS_AS(simulate_bgs(uniform_fiber(), PumpPulse{40e-9}, sweep, PhysicsConstants{}), ConfigError);
}

TEST_CASE("steady state spectrum is a Lorentzian with the given linewidth") {
  const double vb = 10.85e9;
  const double peak = steady_state_spectrum(vb, vb, 30e6);
  CHECK(steady_state_spectrum(vb + 15e6, vb, 30e6) == doctest::Approx(0.5 * peak).epsilon(1e-3));
  CHECK(steady_state_spectrum(vb - 15e6, vb, 30e6) == doctest::Approx(0.5 * peak).epsilon(1e-3));
  for (double dv : {-40e6, -5e6, 3e6, 20e6}) CHECK(steady_state_spectrum(vb + dv, vb, 30e6) < peak);
}

TEST_CASE("interior spectra approach the steady state as the pulse lengthens") {
  const PhysicsConstants c;
  const SweepGrid sweep;
  const double vb = 10.85e9;
  std::vector<double> ss(sweep.count);
  for (int i = 0; i < sweep.count; ++i) ss[i] = steady_state_spectrum(sweep.frequency(i), vb, 30e6);
  const double ss_peak = *std::max_element(ss.begin(), ss.end());
  double previous = 1e300;
  for (double width : {20e-9, 40e-9, 100e-9, 200e-9}) {
    const BgsFrame f = simulate_bgs(uniform_fiber(54.0, vb), PumpPulse{width}, sweep, c);
    const auto col = f.column(520);
    const double peak = *std::max_element(col.begin(), col.end());
    double sup = 0.0;
    for (int i = 0; i < sweep.count; ++i) sup = std::max(sup, std::abs(col[i] / peak - ss[i] / ss_peak));
    CHECK(sup < previous);
    previous = sup;
  }
}

TEST_CASE("fitted width broadens for short pulses") {
  const PhysicsConstants c;
  auto fwhm = [&](double width) {
    const BgsFrame f = simulate_bgs(uniform_fiber(), PumpPulse{width}, SweepGrid{}, c);
    return lorentz_fit(f.column(400), f.sweep).params.fwhm;
  };
  const double w10 = fwhm(10e-9);
  const double w40 = fwhm(40e-9);
  CHECK(w10 > w40);
  CHECK(w40 > 30e6);
}

TEST_CASE("config validation") {
  PhysicsConstants c;
  c.unit_length = 0.03;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const FiberProfile empty = FiberProfile::uniform(0.0, 10.85e9, 30e6, 1.0, PhysicsConstants{});
  CHECK_THROWS_AS(trace_at_frequency(empty, PumpPulse{40e-9}, 10.85e9, PhysicsConstants{}), ConfigError);
  CHECK(FiberProfile::uniform(54.0, 10.85e9, 30e6, 1.0, PhysicsConstants{}).units() == 5400);
}
