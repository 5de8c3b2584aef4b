#include "botda/fixture.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "botda/dataset.hpp"
#include "botda/errors.hpp"

namespace botda {

using nlohmann::json;

std::size_t hotspot_first_sample(const Hotspot& h, double pitch) {
  return static_cast<std::size_t>(std::llround(h.start_m / pitch));
}

std::size_t hotspot_sample_count(const Hotspot& h, double pitch) {
  return static_cast<std::size_t>(std::llround(h.length_m / pitch));
}

std::size_t hotspot_center_sample(const Hotspot& h, double pitch) {
  return hotspot_first_sample(h, pitch) + hotspot_sample_count(h, pitch) / 2;
}

double FixtureConfig::noise_variance() const {
  return noise_variance_for_snr(snr_db) / static_cast<double>(averages);
}

void FixtureConfig::validate() const {
  constants.validate();
  sweep.validate();
  if (!(fiber_length > 0.0)) throw ConfigError("fixture: fiber length must be positive");
  if (!(linewidth > 0.0) || !(gain_scale > 0.0)) throw ConfigError("fixture: linewidth and gain must be positive");
  if (averages == 0) throw ConfigError("fixture: averages must be at least 1");
  if (realizations == 0) throw ConfigError("fixture: realizations must be at least 1");
  if (pulse_widths.empty()) throw ConfigError("fixture: no pulse widths");
  for (double t : pulse_widths) PumpPulse{t}.validate();
  std::vector<Hotspot> sorted = hotspots;
  std::sort(sorted.begin(), sorted.end(), [](const Hotspot& a, const Hotspot& b) { return a.start_m < b.start_m; });
  double prev_end = 0.0;
  for (const Hotspot& h : sorted) {
    if (!(h.length_m > 0.0) || h.start_m < 0.0) throw ConfigError("fixture: hotspot needs positive length");
    if (h.start_m + h.length_m > fiber_length + 1e-9) {
      throw ConfigError("fixture: hotspot at " + std::to_string(h.start_m) + " m exceeds the fiber length");
    }
    if (h.start_m < prev_end - 1e-9) throw ConfigError("fixture: hotspots overlap");
    prev_end = h.start_m + h.length_m;
    const double bfs = background_bfs + h.contrast_hz;
    if (bfs < sweep.start || bfs > sweep.stop()) throw ConfigError("fixture: sweep does not cover hotspot BFS");
  }
  if (background_bfs < sweep.start || background_bfs > sweep.stop()) {
    throw ConfigError("fixture: sweep does not cover the background BFS");
  }
}

std::string FixtureConfig::to_json() const {
  json hs = json::array();
  for (const Hotspot& h : hotspots) hs.push_back({{"start_m", h.start_m}, {"length_m", h.length_m}, {"contrast_hz", h.contrast_hz}});
  json j{{"constants",
          {{"group_velocity", constants.group_velocity},
           {"unit_length", constants.unit_length},
           {"sample_rate", constants.sample_rate}}},
         {"sweep", {{"start", sweep.start}, {"step", sweep.step}, {"count", sweep.count}}},
         {"fiber_length_m", fiber_length},
         {"background_bfs_hz", background_bfs},
         {"linewidth_hz", linewidth},
         {"gain_scale", gain_scale},
         {"hotspots", hs},
         {"pulse_widths_s", pulse_widths},
         {"snr_db", snr_db},
         {"averages", averages},
         {"realizations", realizations}};
  return j.dump();
}

FixtureConfig FixtureConfig::from_json(const std::string& text) {
  FixtureConfig c;
  try {
    const json j = json::parse(text);
    if (j.contains("constants")) {
      const json& k = j.at("constants");
      c.constants.group_velocity = k.value("group_velocity", c.constants.group_velocity);
      c.constants.unit_length = k.value("unit_length", c.constants.unit_length);
      c.constants.sample_rate = k.value("sample_rate", c.constants.sample_rate);
    }
    if (j.contains("sweep")) {
      const json& s = j.at("sweep");
      c.sweep.start = s.value("start", c.sweep.start);
      c.sweep.step = s.value("step", c.sweep.step);
      c.sweep.count = s.value("count", c.sweep.count);
    }
    c.fiber_length = j.value("fiber_length_m", c.fiber_length);
    c.background_bfs = j.value("background_bfs_hz", c.background_bfs);
    c.linewidth = j.value("linewidth_hz", c.linewidth);
    c.gain_scale = j.value("gain_scale", c.gain_scale);
    if (j.contains("hotspots")) {
      c.hotspots.clear();
      for (const json& h : j.at("hotspots")) {
        c.hotspots.push_back({h.at("start_m").get<double>(), h.at("length_m").get<double>(),
                              h.value("contrast_hz", 20e6)});
      }
    }
    c.pulse_widths = j.value("pulse_widths_s", c.pulse_widths);
    c.snr_db = j.value("snr_db", c.snr_db);
    c.averages = j.value("averages", c.averages);
    c.realizations = j.value("realizations", c.realizations);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid fixture config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t FixtureConfig::digest() const { return fnv1a64(to_json()); }

FiberProfile fixture_profile(const FixtureConfig& config) {
  config.validate();
  std::vector<Hotspot> sorted = config.hotspots;
  std::sort(sorted.begin(), sorted.end(), [](const Hotspot& a, const Hotspot& b) { return a.start_m < b.start_m; });
  std::vector<FiberSection> sections;
  double pos = 0.0;
  auto add = [&](double length, double bfs) {
    if (length > 1e-9) sections.push_back({length, bfs, config.linewidth, config.gain_scale});
  };
  for (const Hotspot& h : sorted) {
    add(h.start_m - pos, config.background_bfs);
    add(h.length_m, config.background_bfs + h.contrast_hz);
    pos = h.start_m + h.length_m;
  }
  add(config.fiber_length - pos, config.background_bfs);
  return FiberProfile::from_sections(sections, config.constants);
}

BfsTrace fixture_truth(const FixtureConfig& config) { return truth_trace(fixture_profile(config), config.constants); }

BgsFrame fixture_clean_frame(const FixtureConfig& config, double pulse_width_s) {
  return simulate_bgs(fixture_profile(config), PumpPulse{pulse_width_s}, config.sweep, config.constants);
}

BgsFrame fixture_noisy_frame(const BgsFrame& clean, const FixtureConfig& config, Rng& rng) {
  return add_gaussian_noise(clean, config.noise_variance(), rng);
}

std::uint64_t fixture_realization_seed(std::uint64_t seed, double pulse_width_s, std::size_t realization) {
  const auto ps = static_cast<std::uint64_t>(std::llround(pulse_width_s * 1e12));
  return derive_seed(derive_seed(seed, ps), realization);
}

// ---------------------------------------------------------------- metrics

namespace {

BfsTrace mean_trace(std::span<const BfsTrace> traces) {
  BfsTrace out = traces.front();
  for (std::size_t t = 1; t < traces.size(); ++t) {
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += traces[t].values[i];
  }
  for (double& v : out.values) v /= static_cast<double>(traces.size());
  return out;
}

double nan() { return std::numeric_limits<double>::quiet_NaN(); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

MetricsReport evaluate_traces(const std::string& method, std::span<const BfsTrace> predictions, const BfsTrace& truth,
                              const EvalOptions& options) {
  if (predictions.empty()) throw ConfigError("evaluate: no predictions");
  for (const BfsTrace& p : predictions) {
    if (p.size() != truth.size()) {
      throw ConfigError("evaluate: prediction length " + std::to_string(p.size()) + " differs from truth length " +
                        std::to_string(truth.size()));
    }
  }
  const std::size_t n = truth.size();
  const std::size_t begin = std::min(options.begin, n);
  const std::size_t end = std::min(options.end, n);
  if (begin >= end) throw ConfigError("evaluate: empty evaluation range");

  MetricsReport r;
  r.method = method;
  r.repeats = predictions.size();
  const BfsTrace mean = mean_trace(predictions);
  double ss = 0.0;
  for (std::size_t i = begin; i < end; ++i) {
    const double d = mean.values[i] - truth.values[i];
    ss += d * d;
    r.max_abs_error_mhz = std::max(r.max_abs_error_mhz, std::abs(d) / 1e6);
  }
  r.rmse_mhz = std::sqrt(ss / static_cast<double>(end - begin)) / 1e6;

  if (predictions.size() >= 2) {
    const UncertaintyReport u = bfs_uncertainty(predictions);
    double s = 0.0;
    for (std::size_t i = begin; i < end; ++i) s += u.per_position_std[i];
    r.mean_uncertainty_mhz = s / static_cast<double>(end - begin) / 1e6;
    r.per_position_std_mhz.reserve(n);
    for (double v : u.per_position_std) r.per_position_std_mhz.push_back(v / 1e6);
  }

  const BfsTrace& ref = options.hotspot_reference.values.empty() ? truth : options.hotspot_reference;
  if (ref.size() != n) throw ConfigError("evaluate: hotspot reference length differs from truth");
  for (const Hotspot& h : options.hotspots) {
    HotspotError e;
    e.hotspot = h;
    e.center_sample = hotspot_center_sample(h, truth.pitch);
    if (e.center_sample >= n) throw ConfigError("evaluate: hotspot center outside the trace");
    e.predicted_hz = mean.values[e.center_sample];
    e.reference_hz = ref.values[e.center_sample];
    e.error_hz = e.predicted_hz - e.reference_hz;
    r.hotspots.push_back(e);

    // Rising edge: background plateau before the hotspot, hot plateau inside.
    const std::size_t first = hotspot_first_sample(h, truth.pitch);
    const std::size_t count = hotspot_sample_count(h, truth.pitch);
    EdgeWindow w;
    const std::size_t inside = std::min(options.edge_half_window, count);
    if (first < options.edge_half_window || count < options.edge_half_window) {
      r.transition_lengths_m.push_back(nan());
      continue;
    }
    w.begin = first - options.edge_half_window;
    w.end = first + inside;
    try {
      r.transition_lengths_m.push_back(transition_length(mean, w));
    } catch (const DataError&) {
      r.transition_lengths_m.push_back(nan());
    }
  }
  return r;
}

std::string MetricsReport::to_json() const {
  json hs = json::array();
  for (const HotspotError& e : hotspots) {
    hs.push_back({{"start_m", e.hotspot.start_m},
                  {"length_m", e.hotspot.length_m},
                  {"contrast_hz", e.hotspot.contrast_hz},
                  {"center_sample", e.center_sample},
                  {"predicted_hz", e.predicted_hz},
                  {"reference_hz", e.reference_hz},
                  {"error_mhz", e.error_hz / 1e6}});
  }
  json tl = json::array();
  for (double v : transition_lengths_m) tl.push_back(finite_or_null(v));
  json j{{"method", method},
         {"pulse_width_s", pulse_width_s},
         {"seed", seed},
         {"config_digest", digest_hex(config_digest)},
         {"repeats", repeats},
         {"masked_mse", finite_or_null(masked_mse)},
         {"rmse_mhz", rmse_mhz},
         {"max_abs_error_mhz", max_abs_error_mhz},
         {"mean_uncertainty_mhz", finite_or_null(mean_uncertainty_mhz)},
         {"hotspots", hs},
         {"transition_lengths_m", tl},
         {"seconds", seconds}};
  return j.dump(2);
}

std::string metrics_csv(std::span<const BfsTrace> predictions, const BfsTrace& truth) {
  if (predictions.empty()) throw ConfigError("metrics_csv: no predictions");
  const BfsTrace mean = mean_trace(predictions);
  std::vector<double> sd(truth.size(), 0.0);
  if (predictions.size() >= 2) sd = bfs_uncertainty(predictions).per_position_std;
  std::ostringstream out;
  out.precision(12);
  out << "position_m,truth_hz,mean_hz,std_hz\n";
  for (std::size_t i = 0; i < truth.size(); ++i) {
    out << truth.position(i) << ',' << truth.values[i] << ',' << mean.values[i] << ',' << sd[i] << '\n';
  }
  return out.str();
}

}  // namespace botda
