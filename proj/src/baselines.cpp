#include "botda/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "botda/errors.hpp"

namespace botda {
namespace {

constexpr int kMaxIterations = 200;
constexpr double kRelativeCostTol = 1e-10;

using Vec4 = std::array<double, 4>;
using Mat4 = std::array<Vec4, 4>;

// Parameters in sweep-index coordinates: centre, width, amplitude, offset.
struct IndexParams {
  double centre;
  double width;
  double amplitude;
  double offset;
};

double model(double x, const IndexParams& p) {
  const double u = 2.0 * (x - p.centre) / p.width;
  return p.amplitude / (1.0 + u * u) + p.offset;
}

double cost_of(std::span<const double> y, const IndexParams& p) {
  double c = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = model(static_cast<double>(i), p) - y[i];
    c += r * r;
  }
  return 0.5 * c;
}

// Solves a x = b for a small dense system; false when singular.
bool solve4(Mat4 a, Vec4 b, Vec4& x) {
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    }
    if (!(std::abs(a[piv][col]) > 0.0)) return false;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < 4; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (int r = 3; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < 4; ++c) s -= a[r][c] * x[c];
    x[r] = s / a[r][r];
  }
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

IndexParams initial_guess(std::span<const double> y) {
  const auto peak_it = std::max_element(y.begin(), y.end());
  const auto peak = static_cast<std::size_t>(peak_it - y.begin());
  const double lo = *std::min_element(y.begin(), y.end());
  const double half = lo + 0.5 * (*peak_it - lo);
  std::size_t left = peak;
  while (left > 0 && y[left - 1] >= half) --left;
  std::size_t right = peak;
  while (right + 1 < y.size() && y[right + 1] >= half) ++right;
  const double width = std::max(2.0, static_cast<double>(right - left + 1));
  return {static_cast<double>(peak), width, *peak_it - lo, lo};
}

}  // namespace

double lorentzian(double v, const LorentzParams& p) {
  const double u = 2.0 * (v - p.bfs) / p.fwhm;
  return p.amplitude / (1.0 + u * u) + p.offset;
}

bool LorentzFit::ok(const SweepGrid& grid) const {
  return converged && params.amplitude > 0.0 && params.fwhm > 0.0 && params.bfs >= grid.start &&
         params.bfs <= grid.stop();
}

LorentzFit lorentz_fit(std::span<const double> y, const SweepGrid& grid) {
  grid.validate();
  if (y.size() != static_cast<std::size_t>(grid.count)) {
    throw DataError("spectrum length does not match the sweep grid");
  }
  if (y.size() < 5) throw DataError("Lorentzian fit needs at least 5 points");
  for (double v : y) {
    if (!std::isfinite(v)) throw DataError("spectrum contains a non-finite value");
  }
  const auto [lo_it, hi_it] = std::minmax_element(y.begin(), y.end());
  const double scale = std::max(std::abs(*hi_it), std::abs(*lo_it));
  if (!(*hi_it - *lo_it > 1e-12 * scale) || !(*hi_it > 0.0)) {
    throw DataError("spectrum is flat or has no positive peak");
  }

  IndexParams p = initial_guess(y);
  double cost = cost_of(y, p);
  const double cost_floor = 1e-30 * std::inner_product(y.begin(), y.end(), y.begin(), 0.0);
  double lambda = 1e-3;

  LorentzFit fit;
  int it = 0;
  for (; it < kMaxIterations; ++it) {
    Mat4 jtj{};
    Vec4 jtr{};
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double x = static_cast<double>(i);
      const double d = x - p.centre;
      const double u = 2.0 * d / p.width;
      const double den = 1.0 + u * u;
      const double den2 = den * den;
      const Vec4 g{p.amplitude * 8.0 * d / (p.width * p.width) / den2,
                   p.amplitude * 8.0 * d * d / (p.width * p.width * p.width) / den2, 1.0 / den, 1.0};
      const double r = p.amplitude / den + p.offset - y[i];
      for (int a = 0; a < 4; ++a) {
        jtr[a] += g[a] * r;
        for (int b = 0; b < 4; ++b) jtj[a][b] += g[a] * g[b];
      }
    }

    bool accepted = false;
    double new_cost = cost;
    while (lambda < 1e16) {
      Mat4 a = jtj;
      for (int k = 0; k < 4; ++k) a[k][k] += lambda * std::max(jtj[k][k], 1e-30);
      Vec4 step{};
      Vec4 rhs{-jtr[0], -jtr[1], -jtr[2], -jtr[3]};
      if (solve4(a, rhs, step)) {
        const IndexParams trial{p.centre + step[0], p.width + step[1], p.amplitude + step[2],
                                p.offset + step[3]};
        if (trial.width > 0.0) {
          new_cost = cost_of(y, trial);
          if (new_cost < cost) {
            p = trial;
            accepted = true;
            lambda = std::max(lambda * 0.1, 1e-12);
            break;
          }
        }
      }
      lambda *= 10.0;
    }

    if (!accepted) {
      // No downhill step at any damping: a minimum to working precision.
      fit.converged = true;
      fit.diagnostic = "stationary point";
      break;
    }
    const double change = (cost - new_cost) / std::max(cost, 1e-300);
    cost = new_cost;
    if (change < kRelativeCostTol || cost <= cost_floor) {
      fit.converged = true;
      fit.diagnostic = "relative cost change below tolerance";
      ++it;
      break;
    }
  }
  if (!fit.converged) fit.diagnostic = "iteration limit reached";

  fit.iterations = it;
  fit.cost = cost;
  fit.params.bfs = grid.start + p.centre * grid.step;
  fit.params.fwhm = p.width * grid.step;
  fit.params.amplitude = p.amplitude;
  fit.params.offset = p.offset;
  if (fit.converged && !fit.ok(grid)) fit.diagnostic = "fit left the admissible region";
  return fit;
}

LcfResult lcf_trace(const BgsFrame& frame) {
  frame.validate();
  LcfResult out;
  out.trace.pitch = frame.spatial_pitch;
  out.trace.values.resize(frame.width);
  out.failed.assign(frame.width, false);
  for (std::size_t col = 0; col < frame.width; ++col) {
    const std::vector<double> spectrum = frame.column(col);
    bool good = false;
    try {
      const LorentzFit fit = lorentz_fit(spectrum, frame.sweep);
      if (fit.ok(frame.sweep)) {
        out.trace.values[col] = fit.params.bfs;
        good = true;
      }
    } catch (const DataError&) {
    }
    if (!good) {
      const auto peak = std::max_element(spectrum.begin(), spectrum.end()) - spectrum.begin();
      out.trace.values[col] = frame.sweep.frequency(static_cast<int>(peak));
      out.failed[col] = true;
      ++out.failed_count;
    }
  }
  if (out.failed_count * 10 > frame.width) {
    throw DataError("Lorentzian fit failed on " + std::to_string(out.failed_count) + " of " +
                    std::to_string(frame.width) + " columns");
  }
  return out;
}

BgsFrame dpp_differential(const BgsFrame& frame_long, const BgsFrame& frame_short) {
  frame_long.validate();
  frame_short.validate();
  if (!(frame_long.sweep == frame_short.sweep) || frame_long.width != frame_short.width ||
      frame_long.spatial_pitch != frame_short.spatial_pitch) {
    throw ConfigError("DPP frames must share sweep grid, width and spatial pitch");
  }
  if (frame_long.normalized || frame_short.normalized) {
    throw ConfigError("DPP subtraction needs un-normalized frames");
  }
  BgsFrame out = frame_long;
  for (std::size_t i = 0; i < out.gain.size(); ++i) out.gain[i] -= frame_short.gain[i];
  out.pulse_width_s = frame_long.pulse_width_s - frame_short.pulse_width_s;
  return out;
}

std::size_t footprint_shift(std::size_t lead_samples, std::size_t window_samples) {
  if (window_samples == 0 || window_samples > lead_samples) {
    throw ConfigError("pulse footprint must satisfy 0 < window <= lead");
  }
  return lead_samples - (window_samples - 1) / 2;
}

BfsTrace shift_trace(const BfsTrace& trace, std::size_t shift) {
  BfsTrace out = trace;
  const std::size_t n = trace.size();
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    out.values[i] = trace.values[std::min(i + shift, n - 1)];
  }
  return out;
}

namespace {
std::size_t samples_for(double seconds, const PhysicsConstants& c) {
  return static_cast<std::size_t>(std::llround(seconds * c.sample_rate));
}
}  // namespace

BfsTrace align_single_pulse(const BfsTrace& trace, double pulse_width_s, const PhysicsConstants& c) {
  const std::size_t n = samples_for(pulse_width_s, c);
  return shift_trace(trace, footprint_shift(n, n));
}

BfsTrace align_differential(const BfsTrace& trace, double long_width_s, double short_width_s,
                            const PhysicsConstants& c) {
  return shift_trace(trace, footprint_shift(samples_for(long_width_s, c),
                                            samples_for(long_width_s - short_width_s, c)));
}

UncertaintyReport bfs_uncertainty(std::span<const BfsTrace> traces) {
  if (traces.size() < 2) throw ConfigError("BFS uncertainty needs at least two traces");
  const std::size_t n = traces.front().size();
  for (const BfsTrace& t : traces) {
    if (t.size() != n) throw DataError("traces differ in length");
  }
  UncertaintyReport rep;
  rep.pitch = traces.front().pitch;
  rep.per_position_std.resize(n);
  const auto m = static_cast<double>(traces.size());
  for (std::size_t i = 0; i < n; ++i) {
    double mean = 0.0;
    for (const BfsTrace& t : traces) mean += t.values[i];
    mean /= m;
    double ss = 0.0;
    for (const BfsTrace& t : traces) ss += (t.values[i] - mean) * (t.values[i] - mean);
    rep.per_position_std[i] = std::sqrt(ss / (m - 1.0));
  }
  rep.mean_std = n == 0 ? 0.0
                        : std::accumulate(rep.per_position_std.begin(), rep.per_position_std.end(), 0.0) /
                              static_cast<double>(n);
  return rep;
}

double transition_length(const BfsTrace& trace, const EdgeWindow& w) {
  const std::size_t ps = std::max<std::size_t>(1, w.plateau_samples);
  if (w.end > trace.size() || w.begin >= w.end || w.end - w.begin < 2 * ps + 1) {
    throw ConfigError("edge window does not fit the trace");
  }
  double p0 = 0.0;
  double p1 = 0.0;
  for (std::size_t i = 0; i < ps; ++i) {
    p0 += trace.values[w.begin + i];
    p1 += trace.values[w.end - ps + i];
  }
  p0 /= static_cast<double>(ps);
  p1 /= static_cast<double>(ps);
  const double h = p1 - p0;
  if (!(std::abs(h) > 1e-9 * std::max({1.0, std::abs(p0), std::abs(p1)}))) {
    throw DataError("no edge: window plateaus are equal");
  }
  auto frac = [&](std::size_t i) { return (trace.values[i] - p0) / h; };

  std::size_t i90 = w.begin;
  while (i90 < w.end && frac(i90) < 0.9) ++i90;
  if (i90 == w.end) throw DataError("trace never reaches 90 % of the step");
  std::size_t j = i90;
  while (j > w.begin && frac(j - 1) >= 0.1) --j;
  if (j == w.begin) throw DataError("no lower plateau before the edge");
  const std::size_t i10 = j - 1;  // last sample below 10 %

  for (std::size_t i = i10; i < i90; ++i) {
    if (frac(i + 1) < frac(i) - w.monotone_tolerance) {
      throw DataError("transition is not monotone");
    }
  }
  const auto cross = [&](std::size_t below, double level) {
    std::size_t k = below;
    while (frac(k + 1) < level) ++k;
    const double f0 = frac(k);
    const double f1 = frac(k + 1);
    return static_cast<double>(k) + (level - f0) / (f1 - f0);
  };
  const double x10 = cross(i10, 0.1);
  const double x90 = cross(i90 - 1, 0.9);
  return (x90 - x10) * trace.pitch;
}

}  // namespace botda
