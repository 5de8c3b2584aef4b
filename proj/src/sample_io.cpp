#include "botda/sample_io.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "botda/binio.hpp"
#include "botda/errors.hpp"

namespace botda {

namespace binio {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

}  // namespace binio

namespace {
constexpr std::string_view kMagic = "BGS1";
constexpr std::string_view kFrameMagic = "BGF1";
}

void write_sample(const std::filesystem::path& path, const DatasetSample& s) {
  s.input.validate();
  const std::size_t w = s.input.width;
  if (s.label.size() != w || s.truth.size() != w) {
    throw DataError("sample label/truth length does not match frame width");
  }
  binio::Writer out;
  out.bytes(kMagic);
  out.u16(kSampleFormatVersion);
  out.u32(static_cast<std::uint32_t>(s.input.rows()));
  out.u32(static_cast<std::uint32_t>(w));
  for (double g : s.input.gain) out.f32(static_cast<float>(g));
  for (float l : s.label) out.f32(l);
  for (double t : s.truth) out.f64(t);
  out.u64(s.meta.sample_seed);
  out.u64(s.meta.global_seed);
  out.u64(s.meta.config_digest);
  out.f64(s.meta.pulse_width_s);
  out.f64(s.meta.noise_variance);
  out.f64(s.input.sweep.start);
  out.f64(s.input.sweep.step);
  out.f64(s.input.spatial_pitch);
  out.f64(s.meta.bfs_range.min);
  out.f64(s.meta.bfs_range.max);
  out.u8(s.input.normalized ? 1 : 0);
  binio::write_file(path.string(), out.data());
}

DatasetSample read_sample(const std::filesystem::path& path) {
  const std::string data = binio::read_file(path.string());
  binio::Reader in(data, path.string());
  if (data.size() < kMagic.size() || in.bytes(kMagic.size()) != kMagic) {
    throw DataError(path.string() + ": not a BGS1 sample file (bad magic)");
  }
  const std::uint16_t version = in.u16();
  if (version != kSampleFormatVersion) {
    throw DataError(path.string() + ": unsupported sample version " + std::to_string(version));
  }
  const std::uint32_t rows = in.u32();
  const std::uint32_t width = in.u32();
  if (rows < 2 || width == 0) throw DataError(path.string() + ": corrupt header dimensions");
  const std::size_t body = static_cast<std::size_t>(rows) * width * 4 + std::size_t{width} * 4 +
                           std::size_t{width} * 8 + 3 * 8 + 7 * 8 + 1;
  if (in.remaining() < body) throw DataError(path.string() + ": file is truncated");
  if (in.remaining() > body) throw DataError(path.string() + ": trailing bytes after sample");

  DatasetSample s;
  s.input.width = width;
  s.input.sweep.count = static_cast<int>(rows);
  s.input.gain.resize(static_cast<std::size_t>(rows) * width);
  for (double& g : s.input.gain) g = in.f32();
  s.label.resize(width);
  for (float& l : s.label) l = in.f32();
  s.truth.resize(width);
  for (double& t : s.truth) t = in.f64();
  s.meta.sample_seed = in.u64();
  s.meta.global_seed = in.u64();
  s.meta.config_digest = in.u64();
  s.meta.pulse_width_s = in.f64();
  s.meta.noise_variance = in.f64();
  s.input.sweep.start = in.f64();
  s.input.sweep.step = in.f64();
  s.input.spatial_pitch = in.f64();
  s.meta.bfs_range.min = in.f64();
  s.meta.bfs_range.max = in.f64();
  s.input.normalized = in.u8() != 0;
  s.input.pulse_width_s = s.meta.pulse_width_s;
  s.input.validate();
  return s;
}

void write_frame(const std::filesystem::path& path, const FrameFile& file) {
  const BgsFrame& f = file.frame;
  f.validate();
  binio::Writer out;
  out.bytes(kFrameMagic);
  out.u16(kFrameFormatVersion);
  out.u32(static_cast<std::uint32_t>(f.rows()));
  out.u32(static_cast<std::uint32_t>(f.width));
  out.f64(f.sweep.start);
  out.f64(f.sweep.step);
  out.f64(f.spatial_pitch);
  out.f64(f.pulse_width_s);
  out.u8(f.normalized ? 1 : 0);
  out.u64(file.config_digest);
  out.u64(file.seed);
  for (double g : f.gain) out.f64(g);
  binio::write_file(path.string(), out.data());
}

FrameFile read_frame(const std::filesystem::path& path) {
  const std::string data = binio::read_file(path.string());
  if (data.size() >= kMagic.size() && std::string_view(data).substr(0, kMagic.size()) == kMagic) {
    DatasetSample s = read_sample(path);
    return {std::move(s.input), s.meta.config_digest, s.meta.global_seed};
  }
  binio::Reader in(data, path.string());
  if (data.size() < kFrameMagic.size() || in.bytes(kFrameMagic.size()) != kFrameMagic) {
    throw DataError(path.string() + ": not a frame file (bad magic)");
  }
  const std::uint16_t version = in.u16();
  if (version != kFrameFormatVersion) {
    throw DataError(path.string() + ": unsupported frame version " + std::to_string(version));
  }
  FrameFile file;
  BgsFrame& f = file.frame;
  const std::uint32_t rows = in.u32();
  f.width = in.u32();
  if (rows < 2 || f.width == 0) throw DataError(path.string() + ": corrupt header dimensions");
  f.sweep.count = static_cast<int>(rows);
  f.sweep.start = in.f64();
  f.sweep.step = in.f64();
  f.spatial_pitch = in.f64();
  f.pulse_width_s = in.f64();
  f.normalized = in.u8() != 0;
  file.config_digest = in.u64();
  file.seed = in.u64();
  const std::size_t n = static_cast<std::size_t>(rows) * f.width;
  if (in.remaining() != n * 8) {
    throw DataError(path.string() + (in.remaining() < n * 8 ? ": file is truncated" : ": trailing bytes after frame"));
  }
  f.gain.resize(n);
  for (double& g : f.gain) g = in.f64();
  f.validate();
  return file;
}

}  // namespace botda
