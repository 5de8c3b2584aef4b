#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "botda/baselines.hpp"
#include "botda/dataset.hpp"
#include "botda/errors.hpp"

using namespace botda;

namespace {

std::vector<double> lorentz_spectrum(const SweepGrid& g, const LorentzParams& p) {
  std::vector<double> s(g.count);
  for (int i = 0; i < g.count; ++i) {
    const double x = 2.0 * (g.frequency(i) - p.bfs) / p.fwhm;
    s[i] = p.amplitude / (1.0 + x * x) + p.offset;
  }
  return s;
}

BgsFrame lorentz_frame(const SweepGrid& g, const std::vector<double>& bfs) {
  BgsFrame f;
  f.sweep = g;
  f.width = bfs.size();
  f.gain.resize(static_cast<std::size_t>(g.count) * f.width);
  for (std::size_t c = 0; c < f.width; ++c) {
    const auto s = lorentz_spectrum(g, {bfs[c], 30e6, 0.9, 0.0});
    for (int r = 0; r < g.count; ++r) f.at(r, c) = s[r];
  }
  return f;
}

double fitted_bfs_std(double noise_sd, std::uint64_t seed) {
  const SweepGrid g;
  const auto clean = lorentz_spectrum(g, {10.85e9, 30e6, 1.0, 0.0});
  Rng rng(seed);
  std::vector<double> fits;
  for (int k = 0; k < 300; ++k) {
    auto s = clean;
    for (double& x : s) x += noise_sd * rng.normal();
    fits.push_back(lorentz_fit(s, g).params.bfs);
  }
  const double mean = std::accumulate(fits.begin(), fits.end(), 0.0) / fits.size();
  double ss = 0.0;
  for (double f : fits) ss += (f - mean) * (f - mean);
  return std::sqrt(ss / (fits.size() - 1.0));
}

}  // namespace

TEST_CASE("exact Lorentzian is recovered") {
  const SweepGrid g;
  const LorentzFit fit = lorentz_fit(lorentz_spectrum(g, {10.86e9, 30e6, 0.9, 0.0}), g);
  CHECK(fit.ok(g));
  CHECK(std::abs(fit.params.bfs - 10.86e9) < 0.01e6);
  CHECK(fit.params.fwhm == doctest::Approx(30e6).epsilon(1e-6));
  CHECK(fit.params.amplitude == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("fit is shift-equivariant and amplitude-invariant") {
  SweepGrid g;
  const LorentzParams p{10.8537e9, 31e6, 0.8, 0.02};
  const LorentzFit base = lorentz_fit(lorentz_spectrum(g, p), g);
  const double delta = 4e6;
  SweepGrid shifted = g;
  shifted.start += delta;
  LorentzParams ps = p;
  ps.bfs += delta;
  const LorentzFit moved = lorentz_fit(lorentz_spectrum(shifted, ps), shifted);
  CHECK(moved.params.bfs - base.params.bfs == doctest::Approx(delta).epsilon(1e-9));

  auto scaled = lorentz_spectrum(g, p);
  for (double& x : scaled) x *= 2.5;
  const LorentzFit big = lorentz_fit(scaled, g);
  CHECK(big.params.bfs == doctest::Approx(base.params.bfs).epsilon(1e-12));
  CHECK(big.params.fwhm == doctest::Approx(base.params.fwhm).epsilon(1e-9));
  CHECK(big.params.amplitude == doctest::Approx(2.5 * base.params.amplitude).epsilon(1e-9));
}

TEST_CASE("fitted BFS spread grows with noise") {
  const double a = fitted_bfs_std(0.01, 1);
  const double b = fitted_bfs_std(0.02, 1);
  const double c = fitted_bfs_std(0.04, 1);
  CHECK(a < b);
  CHECK(b < c);
}

TEST_CASE("fit errors") {
  const SweepGrid g;
  CHECK_THROWS_AS(lorentz_fit(std::vector<double>(71, 0.3), g), DataError);
  SweepGrid tiny = g;
  tiny.count = 4;
  CHECK_THROWS_AS(lorentz_fit(std::vector<double>{0.1, 0.5, 0.4, 0.1}, tiny), DataError);
}

TEST_CASE("lcf trace on uniform frames") {
  const SweepGrid g;
  const BgsFrame f = lorentz_frame(g, std::vector<double>(60, 10.845e9));
  const LcfResult r = lcf_trace(f);
  CHECK(r.trace.size() == 60);
  CHECK(r.failed_count == 0);
  for (double v : r.trace.values) CHECK(std::abs(v - 10.845e9) < 1e3);

  Rng rng(4);
  const BgsFrame wide = lorentz_frame(g, std::vector<double>(200, 10.845e9));
  const LcfResult noisy = lcf_trace(add_gaussian_noise(normalize_frame(wide), 0.0005, rng));
  double mean = 0.0;
  for (double v : noisy.trace.values) mean += v / 200.0;
  CHECK(std::abs(mean - 10.845e9) < 0.1e6);
  for (double v : noisy.trace.values) CHECK(std::abs(v - 10.845e9) < 2e6);
}

TEST_CASE("lcf rejects frames with too many failed fits") {
  const SweepGrid g;
  BgsFrame f = lorentz_frame(g, std::vector<double>(10, 10.85e9));
  for (std::size_t c = 0; c < 3; ++c) {
    for (int r = 0; r < g.count; ++r) f.at(r, c) = 0.2;
  }
  CHECK_THROWS_AS(lcf_trace(f), DataError);
}

TEST_CASE("dpp differential") {
  const SweepGrid g;
  BgsFrame a = lorentz_frame(g, {10.84e9, 10.85e9, 10.86e9});
  a.pulse_width_s = 45e-9;
  BgsFrame b = lorentz_frame(g, {10.85e9, 10.85e9, 10.85e9});
  b.pulse_width_s = 40e-9;
  const BgsFrame self = dpp_differential(a, a);
  for (double x : self.gain) CHECK(x == 0.0);
  const BgsFrame d = dpp_differential(a, b);
  CHECK(d.pulse_width_s == doctest::Approx(5e-9));
  BgsFrame a2 = a;
  BgsFrame b2 = b;
  for (double& x : a2.gain) x *= 3.0;
  for (double& x : b2.gain) x *= 3.0;
  const BgsFrame d2 = dpp_differential(a2, b2);
  for (std::size_t i = 0; i < d.gain.size(); ++i) CHECK(d2.gain[i] == doctest::Approx(3.0 * d.gain[i]));
  BgsFrame c = b;
  c.sweep.step = 1e6;
  CHECK_THROWS_AS(dpp_differential(a, c), ConfigError);
}

TEST_CASE("footprint alignment shifts") {
  CHECK(footprint_shift(40, 40) == 21);
  CHECK(footprint_shift(45, 5) == 43);
  BfsTrace t;
  for (int i = 0; i < 10; ++i) t.values.push_back(i);
  const BfsTrace s = shift_trace(t, 3);
  CHECK(s.size() == 10);
  CHECK(s.values[0] == 3.0);
  CHECK(s.values[6] == 9.0);
  CHECK(s.values[9] == 9.0);
}

TEST_CASE("bfs uncertainty") {
  BfsTrace t;
  t.values.assign(500, 10.85e9);
  std::vector<BfsTrace> same(3, t);
  const UncertaintyReport zero = bfs_uncertainty(same);
  for (double s : zero.per_position_std) CHECK(s == 0.0);

  Rng rng(21);
  std::vector<BfsTrace> noisy(6, t);
  for (auto& n : noisy) {
    for (double& v : n.values) v += 0.5e6 * rng.normal();
  }
  CHECK(bfs_uncertainty(noisy).mean_std == doctest::Approx(0.5e6).epsilon(0.10));

  CHECK_THROWS_AS(bfs_uncertainty(std::vector<BfsTrace>{t}), ConfigError);
  std::vector<BfsTrace> mixed{t, t};
  mixed[1].values.pop_back();
  CHECK_THROWS_AS(bfs_uncertainty(mixed), DataError);
}

TEST_CASE("transition length") {
  BfsTrace step;
  for (int i = 0; i < 60; ++i) step.values.push_back(i < 30 ? 10.84e9 : 10.86e9);
  CHECK(transition_length(step, EdgeWindow{10, 50}) <= step.pitch + 1e-12);

  const double sigma = 0.3;
  BfsTrace smooth;
  for (int i = 0; i < 120; ++i) {
    const double z = (i - 60) * smooth.pitch;
    smooth.values.push_back(10.84e9 + 20e6 * 0.5 * std::erfc(-z / (sigma * std::sqrt(2.0))));
  }
  CHECK(std::abs(transition_length(smooth, EdgeWindow{30, 90}) - 2.563 * sigma) <= smooth.pitch);

  BfsTrace flat;
  flat.values.assign(40, 10.85e9);
  CHECK_THROWS_AS(transition_length(flat, EdgeWindow{0, 40}), DataError);
}
