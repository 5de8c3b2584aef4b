#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "botda/baselines.hpp"
#include "botda/binio.hpp"
#include "botda/dataset.hpp"
#include "botda/errors.hpp"
#include "botda/sample_io.hpp"

using namespace botda;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("botda_test_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

BgsFrame small_frame(double scale) {
  BgsFrame f;
  f.sweep.count = 4;
  f.width = 3;
  for (int i = 0; i < 12; ++i) f.gain.push_back(scale * (0.1 + 0.07 * i));
  return f;
}

bool samples_equal(const DatasetSample& a, const DatasetSample& b) {
  return a.input.gain == b.input.gain && a.input.width == b.input.width && a.input.sweep == b.input.sweep &&
         a.input.spatial_pitch == b.input.spatial_pitch && a.input.pulse_width_s == b.input.pulse_width_s &&
         a.input.normalized == b.input.normalized && a.label == b.label && a.truth == b.truth && a.meta == b.meta;
}

}  // namespace

TEST_CASE("degenerate ranges give a constant 54 m profile") {
  ProfileRanges r;
  r.bfs = {10.85e9, 10.85e9};
  r.section_length = {2.0, 2.0};
  r.gain = {1.0, 1.0};
  r.linewidth = {30e6, 30e6};
  Rng rng(3);
  const FiberProfile p = sample_fiber_profile(rng, r, PhysicsConstants{});
  CHECK(p.units() == 5400);
  CHECK(p.length_m == doctest::Approx(54.0));
  for (std::size_t i = 0; i < p.units(); ++i) {
    REQUIRE(p.bfs[i] == 10.85e9);
    REQUIRE(p.gain_scale[i] == 1.0);
    REQUIRE(p.linewidth[i] == 30e6);
  }
}

TEST_CASE("drawn sections stay in range with centered means") {
  const ProfileRanges r;
  const PhysicsConstants c;
  Rng rng(11);
  double sum_bfs = 0.0, sum_len = 0.0, sum_gain = 0.0, sum_lw = 0.0;
  std::size_t n = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const auto sections = sample_fiber_sections(rng, r, c);
    double total = 0.0;
    for (std::size_t k = 0; k < sections.size(); ++k) {
      const FiberSection& s = sections[k];
      total += s.length_m;
      REQUIRE(r.bfs.contains(s.bfs));
      REQUIRE(r.gain.contains(s.gain_scale));
      REQUIRE(r.linewidth.contains(s.linewidth));
      if (k + 1 < sections.size()) {
        REQUIRE(s.length_m >= r.section_length.min - 0.005);
        REQUIRE(s.length_m <= r.section_length.max + 0.005);
        sum_len += s.length_m;
      }
      sum_bfs += s.bfs;
      sum_gain += s.gain_scale;
      sum_lw += s.linewidth;
      ++n;
    }
    REQUIRE(total == doctest::Approx(54.0));
  }
  const double dn = static_cast<double>(n);
  CHECK(sum_bfs / dn == doctest::Approx(r.bfs.mid()).epsilon(0.05));
  CHECK(sum_gain / dn == doctest::Approx(r.gain.mid()).epsilon(0.05));
  CHECK(sum_lw / dn == doctest::Approx(r.linewidth.mid()).epsilon(0.05));
  CHECK(sum_len / (dn - 1000.0) == doctest::Approx(r.section_length.mid()).epsilon(0.05));
}

TEST_CASE("normalize_frame") {
  const BgsFrame a = normalize_frame(small_frame(1.0));
  CHECK(a.normalized);
  CHECK(*std::max_element(a.gain.begin(), a.gain.end()) == 1.0);
  CHECK(normalize_frame(a).gain == a.gain);
  const BgsFrame b = normalize_frame(small_frame(3.7));
  for (std::size_t i = 0; i < a.gain.size(); ++i) CHECK(b.gain[i] == doctest::Approx(a.gain[i]).epsilon(1e-15));
  CHECK_THROWS_AS(normalize_frame(small_frame(0.0)), DataError);
}

TEST_CASE("gaussian noise") {
  BgsFrame f;
  f.sweep.count = 71;
  f.width = 540;
  f.gain.assign(71 * 540, 0.5);
  Rng rng(5);
  CHECK(add_gaussian_noise(f, 0.0, rng).gain == f.gain);
  const BgsFrame g = add_gaussian_noise(f, 0.0005, rng);
  double s = 0.0, s2 = 0.0;
  for (double x : g.gain) {
    s += x - 0.5;
    s2 += (x - 0.5) * (x - 0.5);
  }
  const double n = static_cast<double>(g.gain.size());
  const double sd = std::sqrt((s2 - s * s / n) / (n - 1.0));
  CHECK(sd == doctest::Approx(0.02236).epsilon(0.05));
  CHECK_THROWS_AS(add_gaussian_noise(f, -1.0, rng), ConfigError);
}

TEST_CASE("SNR arithmetic") {
  CHECK(snr_db(0.005) == doctest::Approx(23.0103).epsilon(1e-5));
  CHECK(snr_db(0.0005) == doctest::Approx(33.0103).epsilon(1e-5));
  CHECK(std::round(snr_db(0.005) * 10.0) / 10.0 == 23.0);
  CHECK(std::round(snr_db(0.0005) * 10.0) / 10.0 == 33.0);
  CHECK(noise_variance_for_snr(snr_db(0.002)) == doctest::Approx(0.002));
}

TEST_CASE("BFS normalization") {
  const BfsRange r;
  CHECK(normalize_bfs(10.81e9, r) == 0.0);
  CHECK(normalize_bfs(10.85e9, r) == doctest::Approx(0.5));
  CHECK(normalize_bfs(10.89e9, r) == doctest::Approx(1.0));
  CHECK(denormalize_bfs(normalize_bfs(10.8634e9, r), r) == doctest::Approx(10.8634e9));
  CHECK_THROWS_AS(normalize_bfs(10.80e9, r), ConfigError);
  CHECK_THROWS_AS(normalize_bfs(10.90e9, r), ConfigError);
}

TEST_CASE("label smoothing") {
  BfsTrace flat;
  flat.values.assign(200, 10.84e9);
  const BfsTrace s = smooth_label(flat, 0.5);
  for (double v : s.values) CHECK(v == doctest::Approx(10.84e9).epsilon(1e-15));

  BfsTrace step;
  for (int i = 0; i < 200; ++i) step.values.push_back(i < 100 ? 10.84e9 : 10.86e9);
  const double sr = transition_length(smooth_label(step, 0.5), EdgeWindow{80, 120});
  CHECK(std::abs(sr - 0.5) <= 0.1 + 1e-12);
}

TEST_CASE("generated samples are in range and sized") {
  const DatasetConfig cfg;
  for (std::uint64_t i = 0; i < 500; ++i) {
    const DatasetSample s = make_sample(cfg, derive_seed(9, i), 9);
    REQUIRE(s.input.rows() == 71);
    REQUIRE(s.input.width == 540);
    REQUIRE(s.label.size() == 540);
    REQUIRE(s.input.normalized);
    for (float y : s.label) REQUIRE((y >= 0.0f && y <= 1.0f));
    REQUIRE(cfg.noise_variance.contains(s.meta.noise_variance));
  }
}

TEST_CASE("dataset generation is deterministic and round-trips") {
  DatasetConfig cfg;
  const fs::path a = scratch("a");
  const fs::path b = scratch("b");
  const DatasetManifest ma = generate_dataset(cfg, 42, 2, a);
  generate_dataset(cfg, 42, 2, b);
  CHECK(ma.files.size() == 2);
  for (const auto& name : ma.files) CHECK(binio::read_file((a / name).string()) == binio::read_file((b / name).string()));
  CHECK(binio::read_file((a / "manifest.json").string()) == binio::read_file((b / "manifest.json").string()));

  const DatasetManifest back = read_manifest(a);
  CHECK(back.sample_count == 2);
  CHECK(back.config_digest == cfg.digest());
  const auto loaded = load_dataset(a);
  REQUIRE(loaded.size() == 2);
  CHECK(samples_equal(loaded[0], make_sample(cfg, loaded[0].meta.sample_seed, 42)));

  const fs::path c = scratch("c");
  generate_dataset(cfg, 43, 2, c);
  CHECK(binio::read_file((a / ma.files[0]).string()) != binio::read_file((c / ma.files[0]).string()));
}

TEST_CASE("sample files reject corruption") {
  const fs::path dir = scratch("io");
  const DatasetSample s = make_sample(DatasetConfig{}, 7, 1);
  const fs::path p = dir / "s.bin";
  write_sample(p, s);
  CHECK(samples_equal(read_sample(p), s));

  const std::string bytes = binio::read_file(p.string());
  binio::write_file((dir / "short.bin").string(), bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(read_sample(dir / "short.bin"), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  binio::write_file((dir / "magic.bin").string(), bad);
  CHECK_THROWS_AS(read_sample(dir / "magic.bin"), DataError);
  binio::write_file((dir / "long.bin").string(), bytes + "x");
  CHECK_THROWS_AS(read_sample(dir / "long.bin"), DataError);
  CHECK_THROWS_AS(read_sample(dir / "missing.bin"), DataError);
}

TEST_CASE("frame files round-trip and accept sample files") {
  const fs::path dir = scratch("frame");
  const DatasetSample s = make_sample(DatasetConfig{}, 8, 1);
  write_frame(dir / "f.bin", {s.input, 0xabcdef, 77});
  const FrameFile back = read_frame(dir / "f.bin");
  CHECK(back.frame.gain == s.input.gain);
  CHECK(back.config_digest == 0xabcdef);
  CHECK(back.seed == 77);
  CHECK(back.frame.pulse_width_s == s.input.pulse_width_s);
  write_sample(dir / "s.bin", s);
  CHECK(read_frame(dir / "s.bin").frame.gain == s.input.gain);
}

TEST_CASE("config digest tracks every field") {
  DatasetConfig a;
  DatasetConfig b;
  CHECK(a.digest() == b.digest());
  b.target_sr = 0.6;
  CHECK(a.digest() != b.digest());
  CHECK(DatasetConfig::from_json(a.to_json()).digest() == a.digest());
  CHECK_THROWS_AS(DatasetConfig::from_json("{\"target_sr_m\": -1}"), ConfigError);
}
