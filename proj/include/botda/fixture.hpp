#pragma once

// Synthetic replica of the hotspot experiment and the metrics used to compare
// BFS extraction methods on it.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "botda/baselines.hpp"
#include "botda/physics.hpp"
#include "botda/rng.hpp"
#include "botda/trace.hpp"

namespace botda {

struct Hotspot {
  double start_m = 0.0;
  double length_m = 0.0;
  double contrast_hz = 20e6;

  bool operator==(const Hotspot&) const = default;
};

/// First sample inside the hotspot and its sample count on the receiver grid.
std::size_t hotspot_first_sample(const Hotspot& h, double pitch);
std::size_t hotspot_sample_count(const Hotspot& h, double pitch);
/// first + count / 2.
std::size_t hotspot_center_sample(const Hotspot& h, double pitch);

struct FixtureConfig {
  PhysicsConstants constants;
  SweepGrid sweep;
  double fiber_length = 54.0;  // m
  double background_bfs = 10.84e9;
  double linewidth = 30e6;
  double gain_scale = 1.0;
  std::vector<Hotspot> hotspots{{40.0, 3.3, 20e6}, {45.0, 1.0, 20e6}, {48.0, 0.5, 20e6}};
  std::vector<double> pulse_widths{20e-9, 30e-9, 40e-9, 45e-9, 50e-9};
  double snr_db = 30.0;        // single-shot, relative to the calibrated plateau
  std::size_t averages = 64;
  std::size_t realizations = 6;

  /// Per-entry noise variance after averaging: 10^(-snr/10) / averages.
  double noise_variance() const;
  /// Throws ConfigError for hotspots outside the fiber or overlapping, and
  /// for a sweep that does not cover every BFS.
  void validate() const;
  std::string to_json() const;
  static FixtureConfig from_json(const std::string& text);
  std::uint64_t digest() const;
};

FiberProfile fixture_profile(const FixtureConfig& config);
/// Piecewise BFS on the receiver grid.
BfsTrace fixture_truth(const FixtureConfig& config);
/// Calibrated, noiseless, un-normalized frame.
BgsFrame fixture_clean_frame(const FixtureConfig& config, double pulse_width_s);
/// Clean frame plus averaged measurement noise.
BgsFrame fixture_noisy_frame(const BgsFrame& clean, const FixtureConfig& config, Rng& rng);
/// Seed of realization r at a given pulse width, derived from the run seed.
std::uint64_t fixture_realization_seed(std::uint64_t seed, double pulse_width_s, std::size_t realization);

struct HotspotError {
  Hotspot hotspot;
  std::size_t center_sample = 0;
  double predicted_hz = 0.0;
  double reference_hz = 0.0;
  double error_hz = 0.0;  // predicted - reference
};

struct MetricsReport {
  std::string method;
  double pulse_width_s = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::size_t repeats = 0;
  double masked_mse = std::numeric_limits<double>::quiet_NaN();  // normalized, when known
  double rmse_mhz = 0.0;
  double max_abs_error_mhz = 0.0;
  double mean_uncertainty_mhz = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_position_std_mhz;
  std::vector<HotspotError> hotspots;
  /// Rising-edge 10-90 % length per hotspot; NaN when the hotspot is too
  /// short for a plateau or the edge is not monotone.
  std::vector<double> transition_lengths_m;
  double seconds = 0.0;

  std::string to_json() const;
};

struct EvalOptions {
  /// Sample range used for RMSE and uncertainty.
  std::size_t begin = 0;
  std::size_t end = std::numeric_limits<std::size_t>::max();
  std::vector<Hotspot> hotspots;
  /// Reference for hotspot center errors; the truth trace when empty.
  BfsTrace hotspot_reference;
  std::size_t edge_half_window = 15;
};

/// Errors of the mean prediction against `truth`; with two or more
/// predictions also the per-position standard deviation.
MetricsReport evaluate_traces(const std::string& method, std::span<const BfsTrace> predictions,
                              const BfsTrace& truth, const EvalOptions& options);

/// Per-position CSV: position_m, truth_hz, mean_hz, std_hz.
std::string metrics_csv(std::span<const BfsTrace> predictions, const BfsTrace& truth);

}  // namespace botda
