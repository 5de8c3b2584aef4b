#pragma once

// Time-domain Brillouin gain model for a long-pulse BOTDA sensor.
//
// The fiber is discretised into short units of length `unit_length`. Each unit
// builds up its acoustic wave from rest while the pump pulse overlaps it, and
// the gain seen by the probe at receiver time t is the sum of the transient
// unit responses inside the pulse footprint:
//
//   a(z) = sum_N a_unit(z - N dz, (z + N dz) / Vg)
//   a_unit(z, t) = C g dz Re{ (1 - exp(-G (t - (z+dz)/Vg))) / (2 G) }  inside the pulse gate
//   G = i pi (vB^2 - v^2 - i v dvB) / v
//
// C is a single calibration constant (see calibration_constant()).

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace botda {

struct PhysicsConstants {
  double group_velocity = 2.0e8;  // m/s
  double unit_length = 0.01;      // m
  double sample_rate = 1.0e9;     // samples/s

  double spatial_pitch() const { return group_velocity / (2.0 * sample_rate); }
  /// Number of fiber units per receiver sample (10 for the defaults).
  std::size_t units_per_sample() const;
  /// Transit time of light through one unit.
  double unit_transit_time() const { return unit_length / group_velocity; }

  /// Throws ConfigError unless all fields are positive and the sample pitch
  /// is an integer number of units.
  void validate() const;
};

struct PumpPulse {
  double width_s = 40e-9;

  double length_m(const PhysicsConstants& c) const { return width_s * c.group_velocity; }
  void validate() const;
};

struct SweepGrid {
  double start = 10.78e9;  // Hz
  double step = 2e6;       // Hz
  int count = 71;

  double frequency(int i) const { return start + step * static_cast<double>(i); }
  double stop() const { return frequency(count - 1); }
  void validate() const;
  bool operator==(const SweepGrid&) const = default;
};

/// Homogeneous stretch of fiber used to assemble a profile.
struct FiberSection {
  double length_m = 1.0;
  double bfs = 10.85e9;
  double linewidth = 30e6;
  double gain_scale = 1.0;
};

/// Ground-truth fiber state sampled at unit resolution.
struct FiberProfile {
  std::vector<double> bfs;         // Hz per unit
  std::vector<double> linewidth;   // Hz per unit
  std::vector<double> gain_scale;  // (0, 1] per unit
  double length_m = 0.0;

  std::size_t units() const { return bfs.size(); }
  void validate(const PhysicsConstants& c) const;

  static FiberProfile uniform(double length_m, double bfs, double linewidth, double gain_scale,
                              const PhysicsConstants& c);
  /// Concatenates sections; each section length is rounded to whole units.
  static FiberProfile from_sections(std::span<const FiberSection> sections,
                                    const PhysicsConstants& c);
};

/// Gain matrix, one row per sweep frequency and one column per receiver
/// sample (fiber position column * spatial_pitch). Row-major.
struct BgsFrame {
  std::vector<double> gain;
  SweepGrid sweep;
  std::size_t width = 0;
  double spatial_pitch = 0.1;
  double pulse_width_s = 0.0;  // 0 when unknown
  bool normalized = false;

  std::size_t rows() const { return static_cast<std::size_t>(sweep.count); }
  double& at(std::size_t row, std::size_t col) { return gain[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return gain[row * width + col]; }
  std::vector<double> column(std::size_t col) const;
  /// Throws DataError on shape mismatch or non-finite entries.
  void validate() const;
};

/// Complex detuning rate G (1/s) of the acoustic wave.
std::complex<double> detuning_parameter(double v, double bfs, double linewidth);

/// Number of units N >= 1 whose elapsed interaction time (2N - 1) dz / Vg lies
/// inside the pulse gate [0, T).
std::size_t active_unit_count(const PumpPulse& pulse, const PhysicsConstants& c);

/// Scale factor making the on-resonance plateau of a uniform fiber
/// (gain_scale 1, 30 MHz linewidth) under a 40 ns pulse equal to 1.
double calibration_constant(const PhysicsConstants& c);

/// Transient gain contributed by one unit at receiver time t.
double unit_gain(std::size_t unit_index, double t, double v, const FiberProfile& profile,
                 const PumpPulse& pulse, const PhysicsConstants& c);

/// Gain trace at one sweep frequency, one sample per receiver tick. Sample k
/// maps to fiber position k * spatial_pitch.
std::vector<double> trace_at_frequency(const FiberProfile& profile, const PumpPulse& pulse,
                                       double v, const PhysicsConstants& c);

/// Full frame. Throws ConfigError when the sweep does not cover the profile's
/// BFS values.
BgsFrame simulate_bgs(const FiberProfile& profile, const PumpPulse& pulse, const SweepGrid& sweep,
                      const PhysicsConstants& c);

/// Long-pulse limit Re{1 / (2 G)}: a Lorentzian in v with FWHM = linewidth.
/// Un-calibrated (units of seconds).
double steady_state_spectrum(double v, double bfs, double linewidth);

}  // namespace botda
