#pragma once

// Classical BFS extraction: per-column Lorentzian curve fitting (LCF),
// differential pulse-width pair (DPP) subtraction, and the uncertainty and
// spatial-resolution metrics used to compare methods.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "botda/physics.hpp"
#include "botda/trace.hpp"

namespace botda {

struct LorentzParams {
  double bfs = 0.0;        // Hz
  double fwhm = 0.0;       // Hz
  double amplitude = 0.0;
  double offset = 0.0;
};

/// amplitude / (1 + 4 (v - bfs)^2 / fwhm^2) + offset
double lorentzian(double v, const LorentzParams& p);

struct LorentzFit {
  LorentzParams params;
  bool converged = false;
  int iterations = 0;
  double cost = 0.0;  // 0.5 * sum of squared residuals
  std::string diagnostic;

  /// Converged with positive amplitude and width and a peak inside the sweep.
  bool ok(const SweepGrid& grid) const;
};

/// Levenberg-Marquardt fit of a 4-parameter Lorentzian, started at the
/// discrete peak. Stops when the relative cost change drops below 1e-10 or
/// after 200 iterations. Throws DataError for flat spectra or fewer than 5
/// points; non-convergence is reported in the result, not thrown.
LorentzFit lorentz_fit(std::span<const double> spectrum, const SweepGrid& grid);

struct LcfResult {
  BfsTrace trace;
  std::vector<bool> failed;  // per column
  std::size_t failed_count = 0;
};

/// lorentz_fit on every column. Failed columns fall back to the discrete
/// peak and are flagged; more than 10 % failures throws DataError.
LcfResult lcf_trace(const BgsFrame& frame);

/// Entry-wise long - short on un-normalized frames. The result carries the
/// pulse width difference. Throws ConfigError on grid mismatch.
BgsFrame dpp_differential(const BgsFrame& frame_long, const BgsFrame& frame_short);

/// A pulse footprint covers samples [k - lead, k - lead + window) of the
/// fiber for receiver sample k. Returns the shift that moves each value to
/// the centre of its footprint.
std::size_t footprint_shift(std::size_t lead_samples, std::size_t window_samples);

/// Moves trace values `shift` samples toward the fiber start; the vacated
/// tail replicates the last value.
BfsTrace shift_trace(const BfsTrace& trace, std::size_t shift);

/// Footprint of a single pulse: lead = window = T * sample_rate.
BfsTrace align_single_pulse(const BfsTrace& trace, double pulse_width_s, const PhysicsConstants& c);
/// Footprint of a differential pair: lead = T_long * fs, window = (T_long - T_short) * fs.
BfsTrace align_differential(const BfsTrace& trace, double long_width_s, double short_width_s,
                            const PhysicsConstants& c);

struct UncertaintyReport {
  std::vector<double> per_position_std;  // Hz
  double mean_std = 0.0;                 // Hz
  double pitch = 0.1;                    // m
};

/// Per-position sample standard deviation across repeated traces.
UncertaintyReport bfs_uncertainty(std::span<const BfsTrace> traces);

struct EdgeWindow {
  std::size_t begin = 0;
  std::size_t end = 0;              // exclusive
  std::size_t plateau_samples = 3;  // averaged at each end to get the levels
  double monotone_tolerance = 0.02; // fraction of the step height
};

/// Distance between the 10 % and 90 % crossings of the plateau-to-plateau
/// transition inside the window, linearly interpolated. Throws DataError when
/// there is no edge or the transition is not monotone.
double transition_length(const BfsTrace& trace, const EdgeWindow& window);

}  // namespace botda
