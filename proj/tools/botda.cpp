// Command-line front end: simulation, dataset generation, training,
// inference, classical baselines, the hotspot fixture, evaluation and
// benchmarks. Every output embeds the config digest and the seed.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "botda/autodiff.hpp"
#include "botda/baselines.hpp"
#include "botda/binio.hpp"
#include "botda/dataset.hpp"
#include "botda/errors.hpp"
#include "botda/fixture.hpp"
#include "botda/physics.hpp"
#include "botda/sample_io.hpp"
#include "botda/srnet.hpp"
#include "botda/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace botda;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 1;
  std::string out = ".";
  std::string scale = "desk";
  bool deterministic = false;
};

json load_config(const Common& c) {
  if (c.config_path.empty()) return json::object();
  try {
    return json::parse(binio::read_file(c.config_path));
  } catch (const json::exception& e) {
    throw ConfigError(c.config_path + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

std::string section(const json& cfg, const char* name) {
  return cfg.contains(name) ? cfg.at(name).dump() : std::string("{}");
}

fs::path out_dir(const Common& c) {
  fs::create_directories(c.out);
  return fs::path(c.out);
}

std::string provenance(std::uint64_t digest, const Common& c) {
  return "config_digest=" + digest_hex(digest) + " seed=" + std::to_string(c.seed);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_report(const fs::path& path, json report, std::uint64_t digest, const Common& c) {
  report["config_digest"] = digest_hex(digest);
  report["seed"] = c.seed;
  report["deterministic"] = c.deterministic;
  binio::write_file(path.string(), report.dump(2) + "\n");
}

PhysicsConstants constants_from(const json& j) {
  PhysicsConstants k;
  if (j.contains("constants")) {
    const json& c = j.at("constants");
    k.group_velocity = c.value("group_velocity", k.group_velocity);
    k.unit_length = c.value("unit_length", k.unit_length);
    k.sample_rate = c.value("sample_rate", k.sample_rate);
  }
  k.validate();
  return k;
}

SweepGrid sweep_from(const json& j) {
  SweepGrid s;
  if (j.contains("sweep")) {
    const json& g = j.at("sweep");
    s.start = g.value("start", s.start);
    s.step = g.value("step", s.step);
    s.count = g.value("count", s.count);
  }
  s.validate();
  return s;
}

srnet::ModelConfig model_config(const Common& c, const json& cfg) {
  if (c.scale != "desk" && c.scale != "full") throw ConfigError("--scale must be desk or full");
  srnet::ModelConfig m = c.scale == "full" ? srnet::ModelConfig::full() : srnet::ModelConfig::desk();
  if (cfg.contains("model")) {
    json merged = json::parse(m.to_json());
    merged.merge_patch(cfg.at("model"));
    m = srnet::ModelConfig::from_json(merged.dump());
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const Common& c, bool spectra) {
  const auto t0 = std::chrono::steady_clock::now();
  const json cfg = load_config(c);
  json sim;
  try {
    sim = cfg.contains("simulate") ? cfg.at("simulate") : json::object();
  } catch (const json::exception& e) {
    throw ConfigError(e.what());
  }
  const PhysicsConstants k = constants_from(sim);
  const SweepGrid sweep = sweep_from(sim);
  FiberProfile profile;
  PumpPulse pulse;
  double noise = 0.0;
  try {
    pulse.width_s = sim.value("pulse_width_s", 40e-9);
    noise = sim.value("noise_variance", 0.0);
    if (sim.contains("sections")) {
      std::vector<FiberSection> sections;
      for (const json& s : sim.at("sections")) {
        sections.push_back({s.at("length_m").get<double>(), s.at("bfs_hz").get<double>(),
                            s.value("linewidth_hz", 30e6), s.value("gain_scale", 1.0)});
      }
      profile = FiberProfile::from_sections(sections, k);
    } else {
      profile = FiberProfile::uniform(sim.value("fiber_length_m", 54.0), sim.value("bfs_hz", 10.85e9),
                                      sim.value("linewidth_hz", 30e6), sim.value("gain_scale", 1.0), k);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("simulate config: ") + e.what());
  }
  json eff{{"constants", {{"group_velocity", k.group_velocity}, {"unit_length", k.unit_length}, {"sample_rate", k.sample_rate}}},
           {"sweep", {{"start", sweep.start}, {"step", sweep.step}, {"count", sweep.count}}},
           {"pulse_width_s", pulse.width_s},
           {"noise_variance", noise},
           {"profile", sim}};
  const std::uint64_t digest = fnv1a64(eff.dump());

  BgsFrame frame = simulate_bgs(profile, pulse, sweep, k);
  if (noise > 0.0) {
    Rng rng(c.seed);
    frame = add_gaussian_noise(frame, noise, rng);
  }
  const fs::path dir = out_dir(c);
  write_frame(dir / "frame.bin", {frame, digest, c.seed});
  write_trace_csv(dir / "truth.csv", truth_trace(profile, k), provenance(digest, c));
  if (spectra) {
    std::ostringstream csv;
    csv.precision(12);
    csv << "# " << provenance(digest, c) << "\n";
    csv << "position_m,frequency_hz,gain\n";
    for (std::size_t col = 0; col < frame.width; ++col) {
      for (std::size_t r = 0; r < frame.rows(); ++r) {
        csv << static_cast<double>(col) * frame.spatial_pitch << ',' << sweep.frequency(static_cast<int>(r)) << ','
            << frame.at(r, col) << '\n';
      }
    }
    binio::write_file((dir / "spectra.csv").string(), csv.str());
  }
  write_report(dir / "report.json",
               {{"command", "simulate"},
                {"width", frame.width},
                {"rows", frame.rows()},
                {"pulse_width_s", pulse.width_s},
                {"noise_variance", noise},
                {"seconds", seconds_since(t0)}},
               digest, c);
  std::printf("simulate: %zu x %zu frame -> %s (digest %s)\n", frame.rows(), frame.width,
              (dir / "frame.bin").string().c_str(), digest_hex(digest).c_str());
  return 0;
}

// ---------------------------------------------------------------- dataset

int cmd_gen_dataset(const Common& c, std::size_t count) {
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetConfig config = DatasetConfig::from_json(section(load_config(c), "dataset"));
  const fs::path dir = out_dir(c);
  const DatasetManifest m = generate_dataset(config, c.seed, count, dir);
  write_report(dir / "report.json",
               {{"command", "gen-dataset"}, {"samples", m.sample_count}, {"seconds", seconds_since(t0)}},
               m.config_digest, c);
  std::printf("gen-dataset: %zu samples -> %s (digest %s)\n", m.sample_count, dir.string().c_str(),
              digest_hex(m.config_digest).c_str());
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(const Common& c, const std::string& data, const std::string& val) {
  const json cfg = load_config(c);
  const srnet::ModelConfig mc = model_config(c, cfg);
  srnet::TrainHyper hyper = srnet::TrainHyper::from_json(section(cfg, "train"));
  hyper.seed = c.seed;
  if (c.deterministic) hyper.max_seconds = 0.0;

  const DatasetManifest tm = read_manifest(data);
  const DatasetManifest vm = read_manifest(val);
  if (tm.config_digest != vm.config_digest) {
    throw ConfigError("training and validation sets come from different dataset configs");
  }
  const auto train_set = load_dataset(data);
  const auto val_set = load_dataset(val);

  json eff{{"model", json::parse(mc.to_json())}, {"train", json::parse(hyper.to_json())},
           {"data_digest", digest_hex(tm.config_digest)}, {"data_seed", tm.global_seed}};
  const std::uint64_t digest = fnv1a64(eff.dump());

  srnet::Model model(mc, derive_seed(c.seed, 1));
  const fs::path dir = out_dir(c);
  auto result = srnet::train(model, train_set, val_set, hyper, tm.config.bfs_range(), tm.global_seed,
                             tm.config_digest, [](const srnet::EpochRecord& r) {
                               std::printf("epoch %zu train %.6g val %.6g (%.0f s)\n", r.epoch, r.train_mse,
                                           r.val_mse, r.seconds);
                               std::fflush(stdout);
                             });
  result.best.model_seed = derive_seed(c.seed, 1);
  srnet::save_checkpoint(result.best, dir / "checkpoint.bin");
  binio::write_file((dir / "history.csv").string(),
                    "# " + provenance(digest, c) + "\n" + srnet::history_csv(result.history));
  write_report(dir / "report.json",
               {{"command", "train"},
                {"scale", c.scale},
                {"epochs", result.history.size()},
                {"best_epoch", result.best.best_epoch},
                {"best_val_mse", result.history.at(result.best.best_epoch - 1).val_mse},
                {"stopped_early", result.stopped_early},
                {"hit_time_limit", result.hit_time_limit},
                {"parameters", model.parameter_count()},
                {"receptive_field_width", mc.receptive_field_width()},
                {"seconds", result.seconds}},
               digest, c);
  std::printf("train: best epoch %zu -> %s\n", result.best.best_epoch, (dir / "checkpoint.bin").string().c_str());
  return 0;
}

// ---------------------------------------------------------------- infer / baselines

BgsFrame as_normalized(const BgsFrame& f) { return f.normalized ? f : normalize_frame(f); }

int cmd_infer(const Common& c, const std::string& checkpoint, const std::string& frame_path, std::size_t stride) {
  const auto t0 = std::chrono::steady_clock::now();
  const srnet::Checkpoint ck = srnet::load_checkpoint(checkpoint);
  const srnet::Model model = srnet::model_from_checkpoint(ck);
  const FrameFile ff = read_frame(frame_path);
  const BfsTrace trace = srnet::infer_long(model, as_normalized(ff.frame), ck.bfs_range, stride);
  const fs::path dir = out_dir(c);
  write_trace_csv(dir / "trace.csv", trace, provenance(ff.config_digest, c));
  write_report(dir / "report.json",
               {{"command", "infer"},
                {"checkpoint", checkpoint},
                {"frame", frame_path},
                {"frame_digest", digest_hex(ff.config_digest)},
                {"frame_seed", ff.seed},
                {"bfs_range_hz", {ck.bfs_range.min, ck.bfs_range.max}},
                {"seconds", seconds_since(t0)}},
               ff.config_digest, c);
  std::printf("infer: %zu positions -> %s\n", trace.size(), (dir / "trace.csv").string().c_str());
  return 0;
}

int cmd_lcf(const Common& c, const std::string& frame_path, bool align) {
  const auto t0 = std::chrono::steady_clock::now();
  const FrameFile ff = read_frame(frame_path);
  const LcfResult r = lcf_trace(ff.frame);
  BfsTrace trace = r.trace;
  if (align) {
    if (!(ff.frame.pulse_width_s > 0.0)) throw ConfigError("frame has no pulse width; use --no-align");
    trace = align_single_pulse(trace, ff.frame.pulse_width_s, PhysicsConstants{});
  }
  const fs::path dir = out_dir(c);
  write_trace_csv(dir / "trace.csv", trace, provenance(ff.config_digest, c));
  write_report(dir / "report.json",
               {{"command", "lcf"}, {"frame", frame_path}, {"failed_columns", r.failed_count}, {"aligned", align},
                {"seconds", seconds_since(t0)}},
               ff.config_digest, c);
  std::printf("lcf: %zu positions, %zu failed fits -> %s\n", trace.size(), r.failed_count,
              (dir / "trace.csv").string().c_str());
  return 0;
}

int cmd_dpp(const Common& c, const std::string& long_path, const std::string& short_path) {
  const auto t0 = std::chrono::steady_clock::now();
  const FrameFile lf = read_frame(long_path);
  const FrameFile sf = read_frame(short_path);
  const BgsFrame diff = dpp_differential(lf.frame, sf.frame);
  const LcfResult r = lcf_trace(diff);
  const BfsTrace trace =
      align_differential(r.trace, lf.frame.pulse_width_s, sf.frame.pulse_width_s, PhysicsConstants{});
  const fs::path dir = out_dir(c);
  write_trace_csv(dir / "trace.csv", trace, provenance(lf.config_digest ^ sf.config_digest, c));
  write_report(dir / "report.json",
               {{"command", "dpp"},
                {"long", long_path},
                {"short", short_path},
                {"long_pulse_s", lf.frame.pulse_width_s},
                {"short_pulse_s", sf.frame.pulse_width_s},
                {"failed_columns", r.failed_count},
                {"seconds", seconds_since(t0)}},
               lf.config_digest ^ sf.config_digest, c);
  std::printf("dpp: %zu positions -> %s\n", trace.size(), (dir / "trace.csv").string().c_str());
  return 0;
}

// ---------------------------------------------------------------- fixture / eval

std::string pulse_tag(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%gns", t * 1e9);
  return buf;
}

int cmd_hotspot_fixture(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const FixtureConfig config = FixtureConfig::from_json(section(load_config(c), "fixture"));
  const std::uint64_t digest = config.digest();
  const fs::path dir = out_dir(c);
  write_trace_csv(dir / "truth.csv", fixture_truth(config), provenance(digest, c));
  json files = json::array();
  for (double t : config.pulse_widths) {
    const BgsFrame clean = fixture_clean_frame(config, t);
    write_frame(dir / ("clean_" + pulse_tag(t) + ".bin"), {clean, digest, c.seed});
    for (std::size_t r = 0; r < config.realizations; ++r) {
      Rng rng(fixture_realization_seed(c.seed, t, r));
      const std::string name = "frame_" + pulse_tag(t) + "_r" + std::to_string(r) + ".bin";
      write_frame(dir / name, {fixture_noisy_frame(clean, config, rng), digest, c.seed});
      files.push_back(name);
    }
  }
  write_report(dir / "report.json",
               {{"command", "hotspot-fixture"},
                {"fixture", json::parse(config.to_json())},
                {"noise_variance", config.noise_variance()},
                {"files", files},
                {"seconds", seconds_since(t0)}},
               digest, c);
  std::printf("hotspot-fixture: %zu frames -> %s (digest %s)\n", files.size(), dir.string().c_str(),
              digest_hex(digest).c_str());
  return 0;
}

int cmd_eval(const Common& c, const std::vector<std::string>& preds, const std::string& truth_path,
             const std::string& method, std::size_t begin, std::size_t end) {
  const json cfg = load_config(c);
  const FixtureConfig fixture = FixtureConfig::from_json(section(cfg, "fixture"));
  const BfsTrace truth = read_trace_csv(truth_path);
  std::vector<BfsTrace> traces;
  for (const auto& p : preds) traces.push_back(read_trace_csv(p));
  EvalOptions opt;
  opt.begin = begin;
  opt.end = end;
  for (const Hotspot& h : fixture.hotspots) {
    if (hotspot_center_sample(h, truth.pitch) < truth.size()) opt.hotspots.push_back(h);
  }
  MetricsReport r = evaluate_traces(method, traces, truth, opt);
  r.seed = c.seed;
  r.config_digest = fixture.digest();
  const fs::path dir = out_dir(c);
  binio::write_file((dir / "metrics.json").string(), r.to_json() + "\n");
  binio::write_file((dir / "metrics.csv").string(),
                    "# " + provenance(r.config_digest, c) + "\n" + metrics_csv(traces, truth));
  std::printf("eval: %s rmse %.4f MHz", method.c_str(), r.rmse_mhz);
  if (std::isfinite(r.mean_uncertainty_mhz)) std::printf(", mean uncertainty %.4f MHz", r.mean_uncertainty_mhz);
  std::printf("\n");
  return 0;
}

// ---------------------------------------------------------------- bench / grad-check

int cmd_bench(const Common& c, const std::string& checkpoint, std::size_t frames) {
  const json cfg = load_config(c);
  const DatasetConfig dc = DatasetConfig::from_json(section(cfg, "dataset"));
  std::optional<srnet::Model> model;
  if (!checkpoint.empty()) {
    model.emplace(srnet::model_from_checkpoint(srnet::load_checkpoint(checkpoint)));
  } else {
    model.emplace(model_config(c, cfg), derive_seed(c.seed, 1));
  }
  std::vector<BgsFrame> set;
  for (std::size_t i = 0; i < frames; ++i) set.push_back(make_sample(dc, derive_seed(c.seed, i), c.seed).input);
  const std::size_t spectra = frames * (set.empty() ? 0 : set.front().width);

  auto t0 = std::chrono::steady_clock::now();
  std::size_t failed = 0;
  for (const BgsFrame& f : set) failed += lcf_trace(f).failed_count;
  const double lcf_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const std::size_t batch = 10;
  for (std::size_t b0 = 0; b0 < set.size(); b0 += batch) {
    const std::size_t bn = std::min(batch, set.size() - b0);
    const BgsFrame& f0 = set[b0];
    ad::Tensor<float> x({bn, 1, f0.rows(), f0.width});
    for (std::size_t j = 0; j < bn; ++j) {
      for (std::size_t r = 0; r < f0.rows(); ++r) {
        for (std::size_t w = 0; w < f0.width; ++w) x.at(j, 0, r, w) = static_cast<float>(set[b0 + j].at(r, w));
      }
    }
    (void)model->predict(x);
  }
  const double cnn_s = seconds_since(t0);
  const fs::path dir = out_dir(c);
  write_report(dir / "bench.json",
               {{"command", "bench"},
                {"frames", frames},
                {"spectra", spectra},
                {"scale", checkpoint.empty() ? c.scale : std::string("checkpoint")},
                {"lcf_seconds", lcf_s},
                {"lcf_failed_columns", failed},
                {"cnn_seconds", cnn_s},
                {"cnn_batch", batch},
                {"cnn_over_lcf", cnn_s / lcf_s}},
               dc.digest(), c);
  std::printf("bench: %zu spectra, LCF %.3f s, CNN %.3f s, ratio %.3f\n", spectra, lcf_s, cnn_s, cnn_s / lcf_s);
  return 0;
}

int cmd_grad_check(const Common& c, std::size_t seeds) {
  const fs::path dir = out_dir(c);
  json layers = json::array();
  bool all = true;
  for (const std::string& layer : ad::grad_check_layers()) {
    const ad::GradCheckReport r = ad::grad_check(layer, seeds, c.seed);
    all = all && r.passed();
    layers.push_back({{"layer", r.layer},
                      {"seeds", r.seeds},
                      {"partials", r.checked},
                      {"max_rel_error", r.max_rel_error},
                      {"tolerance", r.tolerance},
                      {"passed", r.passed()}});
    std::printf("%-20s seeds %zu partials %zu max rel error %.3g %s\n", r.layer.c_str(), r.seeds, r.checked,
                r.max_rel_error, r.passed() ? "ok" : "FAILED");
  }
  write_report(dir / "grad_check.json", {{"command", "grad-check"}, {"layers", layers}, {"passed", all}},
               fnv1a64("grad-check:" + std::to_string(seeds)), c);
  if (!all) throw NumericalError("gradient check failed for at least one layer");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BOTDA simulation, BFS extraction and SR-network toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config_path, "Structured-text (JSON) config file");
  app.add_option("--seed", c.seed, "Global seed");
  app.add_option("--out", c.out, "Output directory");
  app.add_option("--scale", c.scale, "Network scale")->check(CLI::IsMember({"desk", "full"}));
  app.add_flag("--deterministic", c.deterministic, "Ignore wall-clock budgets so reruns are bit-identical");

  bool spectra = false;
  auto* sim = app.add_subcommand("simulate", "Simulate a BGS frame");
  sim->add_flag("--spectra", spectra, "Also write per-position spectra CSV");

  std::size_t count = 2000;
  auto* gen = app.add_subcommand("gen-dataset", "Generate a training dataset");
  gen->add_option("--count", count, "Number of samples");

  std::string data;
  std::string val;
  auto* tr = app.add_subcommand("train", "Train the SR network");
  tr->add_option("--data", data, "Training dataset directory")->required();
  tr->add_option("--val", val, "Validation dataset directory")->required();

  std::string checkpoint;
  std::string frame;
  std::size_t stride = 0;
  auto* inf = app.add_subcommand("infer", "Run the network over a frame of any width");
  inf->add_option("--checkpoint", checkpoint)->required();
  inf->add_option("--frame", frame)->required();
  inf->add_option("--stride", stride, "Window stride (default: the columns each window keeps)");

  bool no_align = false;
  auto* lcf = app.add_subcommand("lcf", "Per-column Lorentzian curve fitting");
  lcf->add_option("--frame", frame)->required();
  lcf->add_flag("--no-align", no_align, "Keep receiver-time positions");

  std::string long_path;
  std::string short_path;
  auto* dpp = app.add_subcommand("dpp", "Differential pulse-width pair reconstruction");
  dpp->add_option("--long", long_path)->required();
  dpp->add_option("--short", short_path)->required();

  auto* fix = app.add_subcommand("hotspot-fixture", "Simulate the hotspot fixture at several pulse widths");

  std::vector<std::string> preds;
  std::string truth;
  std::string method = "prediction";
  std::size_t begin = 0;
  std::size_t end = static_cast<std::size_t>(-1);
  auto* ev = app.add_subcommand("eval", "Compare predicted traces with the truth");
  ev->add_option("--pred", preds, "Predicted trace CSV (repeat for realizations)")->required();
  ev->add_option("--truth", truth)->required();
  ev->add_option("--method", method);
  ev->add_option("--begin", begin, "First evaluated sample");
  ev->add_option("--end", end, "One past the last evaluated sample");

  std::size_t frames = 100;
  auto* bench = app.add_subcommand("bench", "Time LCF against network inference");
  bench->add_option("--checkpoint", checkpoint);
  bench->add_option("--frames", frames);

  std::size_t seeds = 20;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient checks for every layer");
  gc->add_option("--seeds", seeds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) return cmd_simulate(c, spectra);
    if (*gen) return cmd_gen_dataset(c, count);
    if (*tr) return cmd_train(c, data, val);
    if (*inf) return cmd_infer(c, checkpoint, frame, stride);
    if (*lcf) return cmd_lcf(c, frame, !no_align);
    if (*dpp) return cmd_dpp(c, long_path, short_path);
    if (*fix) return cmd_hotspot_fixture(c);
    if (*ev) return cmd_eval(c, preds, truth, method, begin, end);
    if (*bench) return cmd_bench(c, checkpoint, frames);
    if (*gc) return cmd_grad_check(c, seeds);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
