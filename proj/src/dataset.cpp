#include "botda/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "botda/binio.hpp"
#include "botda/errors.hpp"
#include "botda/sample_io.hpp"

namespace botda {
namespace {

using nlohmann::json;

// 10-90 % width of a Gaussian-smoothed step in units of sigma: 2 * 1.2816.
constexpr double kRiseWidthInSigma = 2.563;

json interval_json(const Interval& i) { return json::array({i.min, i.max}); }

Interval interval_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

void check_interval(const Interval& i, const char* what) {
  if (!std::isfinite(i.min) || !std::isfinite(i.max) || i.min > i.max) {
    throw ConfigError(std::string(what) + " range must satisfy min <= max");
  }
}

}  // namespace

void BfsRange::validate() const {
  if (!std::isfinite(min) || !std::isfinite(max) || !(min < max)) {
    throw ConfigError("BFS normalization range needs min < max");
  }
}

void ProfileRanges::validate() const {
  check_interval(bfs, "BFS");
  check_interval(section_length, "section length");
  check_interval(gain, "gain");
  check_interval(linewidth, "linewidth");
  if (!(section_length.min > 0.0)) throw ConfigError("section length minimum must be positive");
  if (!(gain.min > 0.0 && gain.max <= 1.0)) throw ConfigError("gain range must lie in (0, 1]");
  if (!(linewidth.min > 0.0) || !(bfs.min > 0.0)) {
    throw ConfigError("BFS and linewidth ranges must be positive");
  }
  if (!(total_length >= section_length.max)) {
    throw ConfigError("total length must be at least the maximum section length");
  }
}

std::vector<FiberSection> sample_fiber_sections(Rng& rng, const ProfileRanges& ranges,
                                                const PhysicsConstants& c) {
  ranges.validate();
  c.validate();
  const auto total_units = static_cast<std::size_t>(std::llround(ranges.total_length / c.unit_length));
  std::vector<FiberSection> sections;
  std::size_t filled = 0;
  while (filled < total_units) {
    const double length = rng.uniform(ranges.section_length.min, ranges.section_length.max);
    auto units = static_cast<std::size_t>(std::max<long long>(1, std::llround(length / c.unit_length)));
    units = std::min(units, total_units - filled);
    FiberSection s;
    s.length_m = static_cast<double>(units) * c.unit_length;
    s.bfs = rng.uniform(ranges.bfs.min, ranges.bfs.max);
    s.gain_scale = rng.uniform(ranges.gain.min, ranges.gain.max);
    s.linewidth = rng.uniform(ranges.linewidth.min, ranges.linewidth.max);
    // uniform01 is on [0, 1), so a degenerate or (0, 1] range still yields a valid gain.
    if (!(s.gain_scale > 0.0)) s.gain_scale = ranges.gain.max;
    sections.push_back(s);
    filled += units;
  }
  return sections;
}

FiberProfile sample_fiber_profile(Rng& rng, const ProfileRanges& ranges,
                                  const PhysicsConstants& c) {
  const std::vector<FiberSection> sections = sample_fiber_sections(rng, ranges, c);
  return FiberProfile::from_sections(sections, c);
}

BfsTrace truth_trace(const FiberProfile& profile, const PhysicsConstants& c) {
  const std::size_t ups = c.units_per_sample();
  BfsTrace t;
  t.pitch = c.spatial_pitch();
  for (std::size_t j = 0; j < profile.units(); j += ups) t.values.push_back(profile.bfs[j]);
  return t;
}

BgsFrame normalize_frame(const BgsFrame& frame) {
  frame.validate();
  if (frame.gain.empty()) throw DataError("cannot normalize an empty frame");
  const double peak = *std::max_element(frame.gain.begin(), frame.gain.end());
  if (!(peak > 0.0)) throw DataError("cannot normalize a frame without a positive maximum");
  BgsFrame out = frame;
  for (double& g : out.gain) g /= peak;
  out.normalized = true;
  return out;
}

BgsFrame add_gaussian_noise(const BgsFrame& frame, double variance, Rng& rng) {
  if (!(variance >= 0.0) || !std::isfinite(variance)) {
    throw ConfigError("noise variance must be non-negative");
  }
  BgsFrame out = frame;
  if (variance == 0.0) return out;
  const double sd = std::sqrt(variance);
  for (double& g : out.gain) g += sd * rng.normal();
  return out;
}

double snr_db(double variance) {
  if (!(variance > 0.0)) throw DomainError("SNR needs a positive noise variance");
  return -10.0 * std::log10(variance);
}

double noise_variance_for_snr(double snr) { return std::pow(10.0, -snr / 10.0); }

double normalize_bfs(double bfs, const BfsRange& range) {
  range.validate();
  const double slack = 1e-9 * range.span();
  if (!(bfs >= range.min - slack && bfs <= range.max + slack)) {
    throw ConfigError("BFS " + std::to_string(bfs) + " Hz outside normalization range [" +
                      std::to_string(range.min) + ", " + std::to_string(range.max) + "]");
  }
  return std::clamp((bfs - range.min) / range.span(), 0.0, 1.0);
}

double denormalize_bfs(double normalized, const BfsRange& range) {
  range.validate();
  return range.min + normalized * range.span();
}

BfsTrace smooth_label(const BfsTrace& trace, double target_sr) {
  if (!(trace.pitch > 0.0)) throw ConfigError("trace pitch must be positive");
  if (!(target_sr >= 2.0 * trace.pitch)) {
    throw ConfigError("target SR must be at least two sample pitches");
  }
  const double sigma = target_sr / kRiseWidthInSigma / trace.pitch;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double x = static_cast<double>(i) / sigma;
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * x * x);
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (double& w : kernel) w /= norm;

  const auto n = static_cast<std::ptrdiff_t>(trace.size());
  BfsTrace out;
  out.pitch = trace.pitch;
  out.values.resize(trace.size());
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    double acc = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
      const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(k + i, 0, n - 1);
      acc += kernel[static_cast<std::size_t>(i + radius)] * trace.values[static_cast<std::size_t>(src)];
    }
    out.values[static_cast<std::size_t>(k)] = acc;
  }
  return out;
}

void DatasetConfig::validate() const {
  constants.validate();
  pulse.validate();
  sweep.validate();
  ranges.validate();
  check_interval(noise_variance, "noise variance");
  if (noise_variance.min < 0.0) throw ConfigError("noise variance must be non-negative");
  if (ranges.bfs.min < sweep.start || ranges.bfs.max > sweep.stop()) {
    throw ConfigError("sweep does not cover the BFS range");
  }
  if (!(target_sr >= 2.0 * constants.spatial_pitch())) {
    throw ConfigError("target SR must be at least two sample pitches");
  }
}

std::string DatasetConfig::to_json() const {
  json j;
  j["constants"] = {{"group_velocity", constants.group_velocity},
                    {"unit_length", constants.unit_length},
                    {"sample_rate", constants.sample_rate}};
  j["pulse_width_s"] = pulse.width_s;
  j["sweep"] = {{"start", sweep.start}, {"step", sweep.step}, {"count", sweep.count}};
  j["ranges"] = {{"bfs", interval_json(ranges.bfs)},
                 {"section_length", interval_json(ranges.section_length)},
                 {"gain", interval_json(ranges.gain)},
                 {"linewidth", interval_json(ranges.linewidth)},
                 {"total_length", ranges.total_length}};
  j["target_sr_m"] = target_sr;
  j["noise_variance"] = interval_json(noise_variance);
  return j.dump();
}

DatasetConfig DatasetConfig::from_json(const std::string& text) {
  DatasetConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("constants")) {
      const json& k = j.at("constants");
      c.constants.group_velocity = k.value("group_velocity", c.constants.group_velocity);
      c.constants.unit_length = k.value("unit_length", c.constants.unit_length);
      c.constants.sample_rate = k.value("sample_rate", c.constants.sample_rate);
    }
    c.pulse.width_s = j.value("pulse_width_s", c.pulse.width_s);
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      c.sweep.start = s.value("start", c.sweep.start);
      c.sweep.step = s.value("step", c.sweep.step);
      c.sweep.count = s.value("count", c.sweep.count);
    }
    if (j.contains("ranges")) {
      const json& r = j.at("ranges");
      if (r.contains("bfs")) c.ranges.bfs = interval_from(r.at("bfs"));
      if (r.contains("section_length")) c.ranges.section_length = interval_from(r.at("section_length"));
      if (r.contains("gain")) c.ranges.gain = interval_from(r.at("gain"));
      if (r.contains("linewidth")) c.ranges.linewidth = interval_from(r.at("linewidth"));
      c.ranges.total_length = r.value("total_length", c.ranges.total_length);
    }
    c.target_sr = j.value("target_sr_m", c.target_sr);
    if (j.contains("noise_variance")) c.noise_variance = interval_from(j.at("noise_variance"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid dataset config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t DatasetConfig::digest() const { return fnv1a64(to_json()); }

std::string digest_hex(std::uint64_t digest) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest));
  return buf;
}

DatasetSample make_sample(const DatasetConfig& config, std::uint64_t sample_seed,
                          std::uint64_t global_seed) {
  Rng rng(sample_seed);
  const FiberProfile profile = sample_fiber_profile(rng, config.ranges, config.constants);
  const BgsFrame clean = normalize_frame(simulate_bgs(profile, config.pulse, config.sweep, config.constants));
  const double variance = rng.uniform(config.noise_variance.min, config.noise_variance.max);

  DatasetSample s;
  s.input = add_gaussian_noise(clean, variance, rng);
  for (double& g : s.input.gain) g = static_cast<double>(static_cast<float>(g));

  const BfsTrace truth = truth_trace(profile, config.constants);
  const BfsTrace smooth = smooth_label(truth, config.target_sr);
  const BfsRange range = config.bfs_range();
  s.truth = truth.values;
  s.label.reserve(smooth.size());
  for (double v : smooth.values) s.label.push_back(static_cast<float>(normalize_bfs(v, range)));

  s.meta.sample_seed = sample_seed;
  s.meta.global_seed = global_seed;
  s.meta.config_digest = config.digest();
  s.meta.pulse_width_s = config.pulse.width_s;
  s.meta.noise_variance = variance;
  s.meta.bfs_range = range;
  return s;
}

std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%06zu.bin", index);
  return buf;
}

DatasetManifest generate_dataset(const DatasetConfig& config, std::uint64_t seed, std::size_t n,
                                 const std::filesystem::path& dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw DataError("cannot create dataset directory " + dir.string());
  }

  DatasetManifest m;
  m.sample_count = n;
  m.config = config;
  m.config_digest = config.digest();
  m.global_seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const DatasetSample s = make_sample(config, derive_seed(seed, i), seed);
    m.files.push_back(sample_file_name(i));
    write_sample(dir / m.files.back(), s);
  }

  json j;
  j["format"] = "BGS1";
  j["version"] = kSampleFormatVersion;
  j["sample_count"] = n;
  j["config_digest"] = digest_hex(m.config_digest);
  j["global_seed"] = seed;
  j["config"] = json::parse(config.to_json());
  j["pulse_width_s"] = config.pulse.width_s;
  j["target_sr_m"] = config.target_sr;
  j["files"] = m.files;
  binio::write_file((dir / "manifest.json").string(), j.dump(2) + "\n");
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const std::string text = binio::read_file((dir / "manifest.json").string());
  DatasetManifest m;
  try {
    const json j = json::parse(text);
    m.sample_count = j.at("sample_count").get<std::size_t>();
    m.global_seed = j.at("global_seed").get<std::uint64_t>();
    m.config = DatasetConfig::from_json(j.at("config").dump());
    m.config_digest = m.config.digest();
    if (digest_hex(m.config_digest) != j.at("config_digest").get<std::string>()) {
      throw DataError("manifest digest does not match its config block");
    }
    m.files = j.at("files").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed manifest: ") + e.what());
  }
  if (m.files.size() != m.sample_count) throw DataError("manifest file list length != sample count");
  return m;
}

std::vector<DatasetSample> load_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<DatasetSample> out;
  out.reserve(m.sample_count);
  for (const std::string& f : m.files) {
    out.push_back(read_sample(dir / f));
    const DatasetSample& s = out.back();
    if (s.input.width != out.front().input.width || s.input.rows() != out.front().input.rows()) {
      throw DataError("dataset sample " + f + " has inconsistent dimensions");
    }
  }
  return out;
}

}  // namespace botda
