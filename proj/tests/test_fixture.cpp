#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <json.hpp>

#include "botda/errors.hpp"
#include "botda/fixture.hpp"

using namespace botda;

TEST_CASE("hotspot geometry on the receiver grid") {
  const Hotspot h{40.0, 3.3, 20e6};
  CHECK(hotspot_first_sample(h, 0.1) == 400);
  CHECK(hotspot_sample_count(h, 0.1) == 33);
  CHECK(hotspot_center_sample(h, 0.1) == 416);
  CHECK(hotspot_center_sample({48.0, 0.5, 20e6}, 0.1) == 482);
}

TEST_CASE("fixture truth places the three hotspots") {
  const FixtureConfig cfg;
  const BfsTrace t = fixture_truth(cfg);
  REQUIRE(t.size() == 540);
  CHECK(t.values[399] == 10.84e9);
  CHECK(t.values[400] == 10.86e9);
  CHECK(t.values[432] == 10.86e9);
  CHECK(t.values[433] == 10.84e9);
  CHECK(t.values[450] == 10.86e9);
  CHECK(t.values[459] == 10.86e9);
  CHECK(t.values[460] == 10.84e9);
  CHECK(t.values[480] == 10.86e9);
  CHECK(t.values[484] == 10.86e9);
  CHECK(t.values[485] == 10.84e9);
  CHECK(t.values[100] == 10.84e9);
}

TEST_CASE("fixture validation") {
  FixtureConfig cfg;
  cfg.hotspots.push_back({53.8, 0.5, 20e6});
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = FixtureConfig{};
  cfg.hotspots.push_back({43.0, 1.0, 20e6});
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = FixtureConfig{};
  cfg.hotspots[0].contrast_hz = 200e6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(FixtureConfig::from_json("{\"averages\": 0}"), ConfigError);
  CHECK_THROWS_AS(FixtureConfig::from_json("{\"hotspots\": [{\"start_m\": 1}]}"), ConfigError);
}

TEST_CASE("noise variance and config round trip") {
  const FixtureConfig cfg;
  CHECK(cfg.noise_variance() == doctest::Approx(1e-3 / 64.0).epsilon(1e-12));
  const FixtureConfig back = FixtureConfig::from_json(cfg.to_json());
  CHECK(back.digest() == cfg.digest());
  CHECK(back.hotspots == cfg.hotspots);
  FixtureConfig other = cfg;
  other.snr_db = 25.0;
  CHECK(other.digest() != cfg.digest());
}

TEST_CASE("noisy realizations are seeded") {
  const FixtureConfig cfg;
  const BgsFrame clean = fixture_clean_frame(cfg, 40e-9);
  CHECK(clean.pulse_width_s == 40e-9);
  Rng a(fixture_realization_seed(5, 40e-9, 0));
  Rng b(fixture_realization_seed(5, 40e-9, 0));
  Rng c(fixture_realization_seed(5, 40e-9, 1));
  const BgsFrame fa = fixture_noisy_frame(clean, cfg, a);
  CHECK(fa.gain == fixture_noisy_frame(clean, cfg, b).gain);
  CHECK(fa.gain != fixture_noisy_frame(clean, cfg, c).gain);
  CHECK(fixture_realization_seed(5, 40e-9, 0) != fixture_realization_seed(5, 45e-9, 0));
}

TEST_CASE("evaluating the truth against itself gives zero error") {
  const FixtureConfig cfg;
  const BfsTrace t = fixture_truth(cfg);
  EvalOptions opt;
  opt.hotspots = cfg.hotspots;
  const std::vector<BfsTrace> preds{t, t};
  const MetricsReport r = evaluate_traces("truth", preds, t, opt);
  CHECK(r.rmse_mhz == 0.0);
  CHECK(r.max_abs_error_mhz == 0.0);
  CHECK(r.mean_uncertainty_mhz == 0.0);
  REQUIRE(r.hotspots.size() == 3);
  for (const auto& h : r.hotspots) CHECK(h.error_hz == 0.0);
  REQUIRE(r.transition_lengths_m.size() == 3);
  CHECK(r.transition_lengths_m[0] <= 0.1 + 1e-12);
  CHECK(std::isnan(r.transition_lengths_m[2]));
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("transition_lengths_m").at(2).is_null());
}

TEST_CASE("evaluation statistics") {
  BfsTrace truth;
  truth.values.assign(100, 10.85e9);
  std::vector<BfsTrace> preds(2, truth);
  for (std::size_t i = 0; i < 100; ++i) {
    preds[0].values[i] += 1e6;
    preds[1].values[i] += 3e6;
  }
  EvalOptions opt;
  opt.begin = 10;
  opt.end = 90;
  const MetricsReport r = evaluate_traces("x", preds, truth, opt);
  CHECK(r.rmse_mhz == doctest::Approx(2.0));
  CHECK(r.max_abs_error_mhz == doctest::Approx(2.0));
  CHECK(r.mean_uncertainty_mhz == doctest::Approx(std::sqrt(2.0)));

  const std::string csv = metrics_csv(preds, truth);
  CHECK(csv.rfind("position_m,truth_hz,mean_hz,std_hz\n", 0) == 0);

  std::vector<BfsTrace> bad{truth};
  bad[0].values.pop_back();
  CHECK_THROWS_AS(evaluate_traces("x", bad, truth, opt), ConfigError);
}
