#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "botda/binio.hpp"
#include "botda/errors.hpp"
#include "botda/srnet.hpp"

using namespace botda;
using namespace botda::srnet;
using botda::ad::Shape;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("botda_test_srnet_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<float> random_input(std::size_t n, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x({n, 1, 71, w});
  for (float& v : x.values()) v = static_cast<float>(rng.uniform01());
  return x;
}

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::desk();
  c.stem_channels = 4;
  c.stage_channels = {4, 4, 8, 8};
  c.window_width = 64;
  c.margin = 8;
  return c;
}

std::vector<DatasetSample> samples(std::size_t n, std::uint64_t seed) {
  const DatasetConfig cfg;
  std::vector<DatasetSample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_sample(cfg, derive_seed(seed, i), seed));
  return out;
}

}  // namespace

TEST_CASE("default config reduces the frequency axis to 18 after the stem") {
  const ModelConfig full = ModelConfig::full();
  const auto ext = full.frequency_extents();
  CHECK(ext[0] == 36);
  CHECK(ext[1] == 18);
  CHECK(ext.back() == 3);
  CHECK(full.stage_blocks == std::vector<std::size_t>{3, 4, 6, 3});
}

TEST_CASE("receptive field covers a 40 ns pulse") {
  CHECK(ModelConfig::full().receptive_field_width() >= 40);
  CHECK(ModelConfig::desk().receptive_field_width() >= 40);
  ModelConfig c = ModelConfig::desk();
  c.stem_kernel_width = 7;
  c.head_kernel_width = 1;
  // 1 + 6 (stem) + 2 (pool) + 4 stages x 2 convs x 2
  CHECK(c.receptive_field_width() == 25);
  CHECK(c.inference_context() == 20);  // the margin already covers 12

  const ModelConfig d = ModelConfig::desk();
  CHECK(d.receptive_field_width() == 99);
  CHECK(d.inference_context() == 49);
  CHECK(tiny_config().inference_context() == 31);  // capped by the 64-wide window
}

TEST_CASE("config validation and round trip") {
  const ModelConfig d = ModelConfig::desk();
  CHECK(ModelConfig::from_json(d.to_json()) == d);
  ModelConfig bad = d;
  bad.stem_kernel = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = d;
  bad.stage_blocks.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = d;
  bad.input_freq = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("width is preserved") {
  const Model desk(ModelConfig::desk(), 1);
  CHECK(desk.predict(random_input(2, 128, 1)).shape() == Shape{2, 1, 1, 128});
  CHECK(desk.predict(random_input(1, 97, 2)).shape() == Shape{1, 1, 1, 97});
  const Tensor<float> zero = desk.predict(Tensor<float>({1, 1, 71, 128}));
  for (float v : zero.values()) CHECK(std::isfinite(v));

  const Model full(ModelConfig::full(), 1);
  const Tensor<float> y = full.predict(random_input(1, 540, 3));
  CHECK(y.shape() == Shape{1, 1, 1, 540});
  for (float v : y.values()) REQUIRE(std::isfinite(v));
}

TEST_CASE("construction is a pure function of config and seed") {
  const Model a(ModelConfig::desk(), 9);
  const Model b(ModelConfig::desk(), 9);
  const Model c(ModelConfig::desk(), 10);
  CHECK(a.parameter_count() == b.parameter_count());
  const auto sa = a.state();
  const auto sb = b.state();
  const auto sc = c.state();
  REQUIRE(sa.size() == sb.size());
  bool differs = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    CHECK(sa[i].name == sb[i].name);
    CHECK(sa[i].value == sb[i].value);
    differs = differs || !(sa[i].value == sc[i].value);
  }
  CHECK(differs);
}

TEST_CASE("checked mode reports non-finite input") {
  const Model m(tiny_config(), 1);
  Tensor<float> x = random_input(1, 64, 4);
  x[100] = std::nanf("");
  CHECK_THROWS_AS(m.predict(x, true), NumericalError);
}

TEST_CASE("short training run lowers the loss") {
  const auto train_set = samples(50, 1);
  const auto val_set = samples(5, 2);
  Model m(tiny_config(), 3);
  TrainHyper h;
  h.lr = 1e-3;
  h.max_epochs = 5;
  h.batch_size = 8;
  h.crops_per_sample = 1;
  h.seed = 4;
  const TrainResult r = train(m, train_set, val_set, h, DatasetConfig{}.bfs_range());
  REQUIRE(r.history.size() == 5);
  CHECK(r.history.back().train_mse < r.history.front().train_mse);
  CHECK(r.best.best_epoch >= 1);
}

TEST_CASE("label edges outside the loss mask do not change training") {
  auto train_set = samples(6, 5);
  const auto val_set = samples(2, 6);
  TrainHyper h;
  h.lr = 1e-3;
  h.max_epochs = 2;
  h.batch_size = 4;
  h.crops_per_sample = 2;
  h.seed = 7;
  Model a(tiny_config(), 8);
  const TrainResult ra = train(a, train_set, val_set, h, DatasetConfig{}.bfs_range());
  for (auto& s : train_set) {
    for (std::size_t i = 0; i < 8; ++i) {
      s.label[i] = 1.0f - s.label[i];
      s.label[s.label.size() - 1 - i] = 0.0f;
    }
  }
  Model b(tiny_config(), 8);
  const TrainResult rb = train(b, train_set, val_set, h, DatasetConfig{}.bfs_range());
  for (std::size_t e = 0; e < 2; ++e) {
    CHECK(ra.history[e].train_mse == rb.history[e].train_mse);
    CHECK(ra.history[e].val_mse == rb.history[e].val_mse);
  }
}

TEST_CASE("deterministic training gives identical checkpoints") {
  const auto train_set = samples(6, 11);
  const auto val_set = samples(2, 12);
  TrainHyper h;
  h.lr = 1e-3;
  h.max_epochs = 2;
  h.batch_size = 4;
  h.seed = 13;
  const fs::path dir = scratch("det");
  for (const char* name : {"a.bin", "b.bin"}) {
    Model m(tiny_config(), 14);
    const TrainResult r = train(m, train_set, val_set, h, DatasetConfig{}.bfs_range());
    save_checkpoint(r.best, dir / name);
  }
  CHECK(binio::read_file((dir / "a.bin").string()) == binio::read_file((dir / "b.bin").string()));
}

TEST_CASE("checkpoint round trip and corruption") {
  const Model m(ModelConfig::desk(), 21);
  Checkpoint ck = make_checkpoint(m, DatasetConfig{}.bfs_range());
  ck.model_seed = 21;
  const fs::path dir = scratch("ckpt");
  save_checkpoint(ck, dir / "m.bin");
  const Checkpoint back = load_checkpoint(dir / "m.bin");
  CHECK(back.bfs_range.min == 10.81e9);
  CHECK(back.bfs_range.max == 10.89e9);
  CHECK(back.config == m.config());
  const Model restored = model_from_checkpoint(back);
  const Tensor<float> x = random_input(1, 128, 22);
  CHECK(restored.predict(x) == m.predict(x));

  std::string bytes = binio::read_file((dir / "m.bin").string());
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  binio::write_file((dir / "flip.bin").string(), flipped);
  CHECK_THROWS_AS(load_checkpoint(dir / "flip.bin"), DataError);
  binio::write_file((dir / "cut.bin").string(), bytes.substr(0, bytes.size() - 9));
  CHECK_THROWS_AS(load_checkpoint(dir / "cut.bin"), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  binio::write_file((dir / "magic.bin").string(), magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.bin"), DataError);

  Model other(tiny_config(), 1);
  CHECK_THROWS_AS(other.load_state(back.tensors), DataError);
}

TEST_CASE("long-fiber inference keeps the frame width") {
  ModelConfig narrow_rf = tiny_config();
  narrow_rf.stem_kernel_width = 7;  // receptive field 25 fits the 64-wide window
  const Model m(narrow_rf, 31);
  const BfsRange range = DatasetConfig{}.bfs_range();
  const DatasetSample s = make_sample(DatasetConfig{}, 32, 1);

  const BfsTrace t = infer_long(m, s.input, range, 0);
  CHECK(t.size() == 540);
  CHECK(t.pitch == doctest::Approx(0.1));
  const BfsTrace t2 = infer_long(m, s.input, range, 1);
  REQUIRE(t2.size() == 540);
  // Kept interior columns never see window padding, so the stride only
  // changes how many identical estimates are averaged.
  for (std::size_t i = 64; i < 476; ++i) CHECK(t2.values[i] == doctest::Approx(t.values[i]).epsilon(1e-12));

  // A window-wide frame is one forward pass with replicated margins.
  BgsFrame narrow = s.input;
  narrow.width = 64;
  narrow.gain.clear();
  for (std::size_t r = 0; r < 71; ++r) {
    for (std::size_t c = 0; c < 64; ++c) narrow.gain.push_back(s.input.at(r, c));
  }
  const BfsTrace single = infer_long(m, narrow, range, 0);
  const Tensor<float> y = m.predict(frame_window(narrow, 0, 64));
  REQUIRE(single.size() == 64);
  for (std::size_t i = 8; i < 56; ++i) CHECK(single.values[i] == doctest::Approx(denormalize_bfs(y[i], range)));
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(single.values[i] == single.values[8]);
    CHECK(single.values[63 - i] == single.values[55]);
  }

  CHECK_THROWS_AS(infer_long(m, s.input, BfsRange{0.0, 0.0}, 0), ConfigError);
  CHECK_THROWS_AS(infer_long(m, s.input, range, 64 - 2 * m.config().inference_context() + 1), ConfigError);
  narrow.width = 40;
  narrow.gain.resize(71 * 40);
  CHECK_THROWS_AS(infer_long(m, narrow, range, 0), ConfigError);
}
