#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "botda/physics.hpp"
#include "botda/rng.hpp"
#include "botda/trace.hpp"

namespace botda {

struct Interval {
  double min = 0.0;
  double max = 0.0;

  double mid() const { return 0.5 * (min + max); }
  bool contains(double x) const { return x >= min && x <= max; }
  bool operator==(const Interval&) const = default;
};

/// Random ranges for the piecewise-uniform training fibers.
struct ProfileRanges {
  Interval bfs{10.81e9, 10.89e9};
  Interval section_length{0.5, 5.0};
  Interval gain{0.8, 1.0};
  Interval linewidth{25e6, 35e6};
  double total_length = 54.0;

  void validate() const;
  bool operator==(const ProfileRanges&) const = default;
};

/// Draws uniform sections until total_length is filled; the last one is
/// truncated.
std::vector<FiberSection> sample_fiber_sections(Rng& rng, const ProfileRanges& ranges,
                                                const PhysicsConstants& c);
FiberProfile sample_fiber_profile(Rng& rng, const ProfileRanges& ranges,
                                  const PhysicsConstants& c);

/// BFS at each receiver sample position (unit k * units_per_sample).
BfsTrace truth_trace(const FiberProfile& profile, const PhysicsConstants& c);

/// Divides by the global maximum. Throws DataError if the maximum is not
/// strictly positive.
BgsFrame normalize_frame(const BgsFrame& frame);

/// Adds i.i.d. N(0, variance) to every entry.
BgsFrame add_gaussian_noise(const BgsFrame& frame, double variance, Rng& rng);

/// SNR of a peak-1 signal with the given noise variance, in dB.
double snr_db(double variance);
double noise_variance_for_snr(double snr_db);

/// (bfs - min) / (max - min). Values outside the range (beyond rounding
/// slack) throw ConfigError rather than being clamped.
double normalize_bfs(double bfs, const BfsRange& range);
double denormalize_bfs(double normalized, const BfsRange& range);

/// Gaussian low-pass along the fiber with sigma = target_sr / 2.563, so that
/// an ideal step acquires a 10-90 % rise of target_sr. Ends are replicated.
BfsTrace smooth_label(const BfsTrace& trace, double target_sr);

struct DatasetConfig {
  PhysicsConstants constants;
  PumpPulse pulse;
  SweepGrid sweep;
  ProfileRanges ranges;
  double target_sr = 0.5;                // m
  Interval noise_variance{0.0005, 0.005};

  BfsRange bfs_range() const { return {ranges.bfs.min, ranges.bfs.max}; }
  void validate() const;
  /// Canonical structured-text form; the digest is computed from it.
  std::string to_json() const;
  static DatasetConfig from_json(const std::string& text);
  std::uint64_t digest() const;
};

struct SampleMeta {
  std::uint64_t sample_seed = 0;
  std::uint64_t global_seed = 0;
  std::uint64_t config_digest = 0;
  double pulse_width_s = 0.0;
  double noise_variance = 0.0;
  BfsRange bfs_range;

  bool operator==(const SampleMeta&) const = default;
};

/// One training pair: normalized noisy frame and smoothed normalized label.
struct DatasetSample {
  BgsFrame input;
  std::vector<float> label;   // normalized smoothed BFS in [0, 1]
  std::vector<double> truth;  // raw piecewise BFS, Hz
  SampleMeta meta;
};

/// Builds one sample from its own seed. Input entries are rounded to float32
/// so the binary round trip is lossless.
DatasetSample make_sample(const DatasetConfig& config, std::uint64_t sample_seed,
                          std::uint64_t global_seed);

struct DatasetManifest {
  std::size_t sample_count = 0;
  std::uint64_t config_digest = 0;
  std::uint64_t global_seed = 0;
  DatasetConfig config;
  std::vector<std::string> files;
};

std::string sample_file_name(std::size_t index);

/// Writes manifest.json and sample_%06d.bin files into `dir`.
DatasetManifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, std::size_t n,
                                 const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir);

std::string digest_hex(std::uint64_t digest);
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace botda
