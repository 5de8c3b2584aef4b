#pragma once

#include <cstdint>
#include <filesystem>

#include "botda/dataset.hpp"

namespace botda {

// Sample file layout (all little-endian):
//   "BGS1"  u16 version
//   u32 freq_count  u32 width
//   f32[freq_count * width] input, row-major
//   f32[width] label
//   f64[width] truth
//   metadata: u64 sample_seed, u64 global_seed, u64 config_digest,
//             f64 pulse_width_s, f64 noise_variance, f64 sweep_start,
//             f64 sweep_step, f64 spatial_pitch, f64 bfs_min, f64 bfs_max,
//             u8 normalized
inline constexpr std::uint16_t kSampleFormatVersion = 1;

void write_sample(const std::filesystem::path& path, const DatasetSample& sample);
DatasetSample read_sample(const std::filesystem::path& path);

// Frame file layout (all little-endian):
//   "BGF1"  u16 version
//   u32 freq_count  u32 width
//   f64 sweep_start, f64 sweep_step, f64 spatial_pitch, f64 pulse_width_s
//   u8 normalized  u64 config_digest  u64 seed
//   f64[freq_count * width] gain, row-major
inline constexpr std::uint16_t kFrameFormatVersion = 1;

struct FrameFile {
  BgsFrame frame;
  std::uint64_t config_digest = 0;
  std::uint64_t seed = 0;
};

void write_frame(const std::filesystem::path& path, const FrameFile& file);
/// Accepts frame files and dataset sample files (whose input frame is
/// returned).
FrameFile read_frame(const std::filesystem::path& path);

}  // namespace botda
