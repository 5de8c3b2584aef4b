#include "botda/physics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "botda/errors.hpp"

namespace botda {
namespace {

constexpr double kReferencePulse = 40e-9;
constexpr double kReferenceLinewidth = 30e6;

bool positive_finite(double x) { return std::isfinite(x) && x > 0.0; }

// Maximal stretch of units with identical parameters.
struct Run {
  std::size_t begin;
  std::size_t end;
  double bfs;
  double linewidth;
  double gain_scale;
};

std::vector<Run> runs_of(const FiberProfile& p) {
  std::vector<Run> runs;
  for (std::size_t j = 0; j < p.units(); ++j) {
    if (!runs.empty()) {
      Run& r = runs.back();
      if (r.bfs == p.bfs[j] && r.linewidth == p.linewidth[j] && r.gain_scale == p.gain_scale[j]) {
        r.end = j + 1;
        continue;
      }
    }
    runs.push_back({j, j + 1, p.bfs[j], p.linewidth[j], p.gain_scale[j]});
  }
  return runs;
}

std::size_t sample_count(const FiberProfile& p, const PhysicsConstants& c) {
  const std::size_t ups = c.units_per_sample();
  return (p.units() + ups - 1) / ups;
}

// Closed-form sum over a run of the Eq.-(1) unit terms: for N in [n0, n1],
// sum (1 - E^(2N-1)) with E = exp(-G dz/Vg).
std::vector<double> trace_from_runs(const std::vector<Run>& runs, std::size_t units,
                                    std::size_t samples, std::size_t n_active, double v,
                                    const PhysicsConstants& c, double calib) {
  std::vector<double> out(samples, 0.0);
  if (n_active == 0 || runs.empty()) return out;

  const double delta = c.unit_transit_time();
  struct RunTerms {
    std::complex<double> amplitude;  // C g dz / (2G)
    std::complex<double> g_delta;    // G dz/Vg
    std::complex<double> inv_one_minus_e2;
  };
  std::vector<RunTerms> terms;
  terms.reserve(runs.size());
  for (const Run& r : runs) {
    const std::complex<double> g = detuning_parameter(v, r.bfs, r.linewidth);
    const std::complex<double> gd = g * delta;
    terms.push_back({calib * r.gain_scale * c.unit_length / (2.0 * g), gd,
                     1.0 / (1.0 - std::exp(-2.0 * gd))});
  }

  const std::size_t ups = c.units_per_sample();
  std::size_t first_run = 0;
  for (std::size_t k = 0; k < samples; ++k) {
    const std::size_t big_k = k * ups;
    if (big_k == 0) continue;
    // Contributing units j = K - N, N in [1, n_active], j >= 0.
    const std::size_t lo = big_k > n_active ? big_k - n_active : 0;
    const std::size_t hi = std::min(big_k - 1, units - 1);
    while (first_run < runs.size() && runs[first_run].end <= lo) ++first_run;
    double acc = 0.0;
    for (std::size_t r = first_run; r < runs.size() && runs[r].begin <= hi; ++r) {
      const std::size_t j_lo = std::max(runs[r].begin, lo);
      const std::size_t j_hi = std::min(runs[r].end - 1, hi);
      const std::size_t n0 = big_k - j_hi;
      const double cnt = static_cast<double>(j_hi - j_lo + 1);
      const RunTerms& t = terms[r];
      const std::complex<double> head = std::exp(-t.g_delta * (2.0 * static_cast<double>(n0) - 1.0));
      const std::complex<double> tail = 1.0 - std::exp(-2.0 * t.g_delta * cnt);
      acc += (t.amplitude * (cnt - head * tail * t.inv_one_minus_e2)).real();
    }
    out[k] = acc;
  }
  return out;
}

}  // namespace

std::size_t PhysicsConstants::units_per_sample() const {
  const double ratio = spatial_pitch() / unit_length;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * rounded) {
    throw ConfigError("sample pitch " + std::to_string(spatial_pitch()) +
                      " m is not an integer multiple of the unit length");
  }
  return static_cast<std::size_t>(rounded);
}

void PhysicsConstants::validate() const {
  if (!positive_finite(group_velocity) || !positive_finite(unit_length) ||
      !positive_finite(sample_rate)) {
    throw ConfigError("physics constants must be strictly positive");
  }
  (void)units_per_sample();
}

void PumpPulse::validate() const {
  if (!positive_finite(width_s)) throw ConfigError("pump pulse width must be positive");
}

void SweepGrid::validate() const {
  if (!std::isfinite(start) || !positive_finite(step)) {
    throw ConfigError("sweep step must be positive");
  }
  if (count < 2) throw ConfigError("sweep needs at least two frequencies");
}

void FiberProfile::validate(const PhysicsConstants& c) const {
  if (bfs.empty()) throw ConfigError("fiber profile is empty");
  if (linewidth.size() != bfs.size() || gain_scale.size() != bfs.size()) {
    throw ConfigError("fiber profile arrays differ in length");
  }
  const auto expected = static_cast<std::size_t>(std::llround(length_m / c.unit_length));
  if (expected != bfs.size()) {
    throw ConfigError("fiber profile has " + std::to_string(bfs.size()) + " units, length implies " +
                      std::to_string(expected));
  }
  for (std::size_t j = 0; j < bfs.size(); ++j) {
    if (!positive_finite(bfs[j]) || !positive_finite(linewidth[j])) {
      throw ConfigError("fiber profile BFS and linewidth must be positive at unit " +
                        std::to_string(j));
    }
    if (!(gain_scale[j] > 0.0 && gain_scale[j] <= 1.0)) {
      throw ConfigError("gain scale must lie in (0, 1] at unit " + std::to_string(j));
    }
  }
}

FiberProfile FiberProfile::uniform(double length_m, double bfs, double linewidth,
                                   double gain_scale, const PhysicsConstants& c) {
  const FiberSection s{length_m, bfs, linewidth, gain_scale};
  return from_sections(std::span(&s, 1), c);
}

FiberProfile FiberProfile::from_sections(std::span<const FiberSection> sections,
                                         const PhysicsConstants& c) {
  FiberProfile p;
  for (const FiberSection& s : sections) {
    const auto n = static_cast<std::size_t>(std::llround(s.length_m / c.unit_length));
    p.bfs.insert(p.bfs.end(), n, s.bfs);
    p.linewidth.insert(p.linewidth.end(), n, s.linewidth);
    p.gain_scale.insert(p.gain_scale.end(), n, s.gain_scale);
  }
  p.length_m = static_cast<double>(p.bfs.size()) * c.unit_length;
  return p;
}

std::vector<double> BgsFrame::column(std::size_t col) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < rows(); ++r) out[r] = at(r, col);
  return out;
}

void BgsFrame::validate() const {
  sweep.validate();
  if (gain.size() != rows() * width) throw DataError("frame gain size does not match its shape");
  for (double g : gain) {
    if (!std::isfinite(g)) throw DataError("frame contains a non-finite entry");
  }
}

std::complex<double> detuning_parameter(double v, double bfs, double linewidth) {
  if (!positive_finite(v) || !positive_finite(bfs) || !positive_finite(linewidth)) {
    throw DomainError("detuning parameter needs positive frequency, BFS and linewidth");
  }
  using namespace std::complex_literals;
  return 1i * std::numbers::pi * (bfs * bfs - v * v - 1i * v * linewidth) / v;
}

std::size_t active_unit_count(const PumpPulse& pulse, const PhysicsConstants& c) {
  pulse.validate();
  // Largest N with (2N - 1) < T / delta. Snap near-integers so that e.g.
  // 40 ns / 0.05 ns is treated as exactly 800.
  double x = pulse.width_s / c.unit_transit_time();
  const double xr = std::round(x);
  if (std::abs(x - xr) <= 1e-9 * std::max(1.0, xr)) x = xr;
  const double half = (x + 1.0) / 2.0;
  const double n = std::ceil(half) - 1.0;
  return n > 0.0 ? static_cast<std::size_t>(n) : 0;
}

double calibration_constant(const PhysicsConstants& c) {
  c.validate();
  const std::size_t n = active_unit_count(PumpPulse{kReferencePulse}, c);
  const double rate = std::numbers::pi * kReferenceLinewidth;  // on resonance G is real
  const double delta = c.unit_transit_time();
  double sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double elapsed = (2.0 * static_cast<double>(k) - 1.0) * delta;
    sum += (1.0 - std::exp(-rate * elapsed)) / (2.0 * rate);
  }
  return 1.0 / (sum * c.unit_length);
}

double unit_gain(std::size_t unit_index, double t, double v, const FiberProfile& profile,
                 const PumpPulse& pulse, const PhysicsConstants& c) {
  if (unit_index >= profile.units()) {
    throw ConfigError("unit index " + std::to_string(unit_index) + " outside profile of " +
                      std::to_string(profile.units()) + " units");
  }
  if (!(t >= 0.0)) throw DomainError("time must be non-negative");
  const double z = static_cast<double>(unit_index) * c.unit_length;
  const double elapsed = t - (z + c.unit_length) / c.group_velocity;
  if (elapsed < 0.0 || elapsed >= pulse.width_s) return 0.0;
  const std::complex<double> g =
      detuning_parameter(v, profile.bfs[unit_index], profile.linewidth[unit_index]);
  const std::complex<double> transient = (1.0 - std::exp(-g * elapsed)) / (2.0 * g);
  return calibration_constant(c) * profile.gain_scale[unit_index] * c.unit_length *
         transient.real();
}

std::vector<double> trace_at_frequency(const FiberProfile& profile, const PumpPulse& pulse,
                                       double v, const PhysicsConstants& c) {
  c.validate();
  pulse.validate();
  profile.validate(c);
  if (!positive_finite(v)) throw DomainError("sweep frequency must be positive");
  return trace_from_runs(runs_of(profile), profile.units(), sample_count(profile, c),
                         active_unit_count(pulse, c), v, c, calibration_constant(c));
}

BgsFrame simulate_bgs(const FiberProfile& profile, const PumpPulse& pulse, const SweepGrid& sweep,
                      const PhysicsConstants& c) {
  c.validate();
  pulse.validate();
  sweep.validate();
  profile.validate(c);
  const auto [lo, hi] = std::minmax_element(profile.bfs.begin(), profile.bfs.end());
  const double slack = 1e-9 * sweep.step;
  if (*lo < sweep.start - slack || *hi > sweep.stop() + slack) {
    throw ConfigError("sweep [" + std::to_string(sweep.start) + ", " +
                      std::to_string(sweep.stop()) + "] Hz does not cover the fiber BFS range");
  }

  const std::vector<Run> runs = runs_of(profile);
  const std::size_t n_active = active_unit_count(pulse, c);
  const double calib = calibration_constant(c);

  BgsFrame frame;
  frame.sweep = sweep;
  frame.width = sample_count(profile, c);
  frame.spatial_pitch = c.spatial_pitch();
  frame.pulse_width_s = pulse.width_s;
  frame.gain.resize(frame.rows() * frame.width);
  for (int i = 0; i < sweep.count; ++i) {
    const std::vector<double> row = trace_from_runs(runs, profile.units(), frame.width, n_active,
                                                    sweep.frequency(i), c, calib);
    std::copy(row.begin(), row.end(), frame.gain.begin() + static_cast<std::ptrdiff_t>(i) *
                                                               static_cast<std::ptrdiff_t>(frame.width));
  }
  return frame;
}

double steady_state_spectrum(double v, double bfs, double linewidth) {
  return (1.0 / (2.0 * detuning_parameter(v, bfs, linewidth))).real();
}

}  // namespace botda
