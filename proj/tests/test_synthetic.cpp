#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "latte/error.hpp"
#include "latte/rng.hpp"
#include "latte/synthetic.hpp"

using namespace latte;

namespace {

SceneConfig small_config(std::uint64_t seed) {
  SceneConfig c;
  c.height = 12;
  c.width = 10;
  c.time_steps = 6;
  c.dynamic_features = 2;
  c.static_features = 4;
  c.n_relevant = 3;
  c.n_sensors = 15;
  c.seed = seed;
  return c;
}

double feature_at(const FeatureGrid& f, std::size_t t, std::size_t r, std::size_t c,
                  std::size_t id) {
  const std::size_t pd = f.dynamic.dim(3);
  return id < pd ? f.dynamic.at({t, r, c, id}) : f.statics.at({r, c, id - pd});
}

// Smoothed feature-driven part of the truth, rebuilt from the documented
// coefficients (the smoother is checked separately against a kernel sum).
Tensor feature_part(const SyntheticScene& s, std::size_t t) {
  const std::size_t h = s.config.height, w = s.config.width;
  const double coef[] = {1.0, 0.8, 0.6, 0.5, 0.4};
  const auto& ids = s.relevant_feature_ids;
  Tensor g({h, w});
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double v = 0.0;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        v += coef[std::min<std::size_t>(k, 4)] * feature_at(s.features, t, r, c, ids[k]);
      }
      if (ids.size() >= 2) {
        v += 0.6 * feature_at(s.features, t, r, c, ids[0]) * feature_at(s.features, t, r, c, ids[1]);
      }
      g.at({r, c}) = v;
    }
  }
  return gaussian_smooth(g, s.config.spatial_corr_length);
}

}  // namespace

TEST_SUITE("synthetic") {
  TEST_CASE("zero noise labels equal the truth at sensor cells") {
    SceneConfig cfg = small_config(4);
    cfg.noise_std = 0.0;
    const SyntheticScene s = generate_scene(cfg);
    REQUIRE(s.sensor_cells.size() == cfg.n_sensors);
    CHECK(std::is_sorted(s.sensor_cells.begin(), s.sensor_cells.end()));
    for (std::size_t t = 0; t < cfg.time_steps; ++t) {
      std::size_t observed = 0;
      for (const Cell& c : s.sensor_cells) {
        CHECK(s.labels.observed(t, c));
        CHECK(s.labels.value(t, c) == s.truth.at({t, c.row, c.col}));
      }
      for (double m : s.labels.mask.data()) observed += m > 0.0;
      CHECK(observed == cfg.n_sensors * cfg.time_steps);
    }

    cfg.noise_std = 0.5;
    const SyntheticScene noisy = generate_scene(cfg);
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < cfg.time_steps; ++t) {
      for (const Cell& c : noisy.sensor_cells) {
        const double d = noisy.labels.value(t, c) - noisy.truth.at({t, c.row, c.col});
        ss += d * d;
        ++n;
      }
    }
    CHECK(std::sqrt(ss / static_cast<double>(n)) == doctest::Approx(0.5).epsilon(0.2));
  }

  TEST_CASE("scenes are deterministic per seed") {
    const SyntheticScene a = generate_scene(small_config(9));
    const SyntheticScene b = generate_scene(small_config(9));
    const SyntheticScene c = generate_scene(small_config(10));
    CHECK(a.truth == b.truth);
    CHECK(a.labels.values == b.labels.values);
    CHECK(a.features.dynamic == b.features.dynamic);
    CHECK(a.features.statics == b.features.statics);
    CHECK(a.sensor_cells == b.sensor_cells);
    CHECK(a.relevant_feature_ids == b.relevant_feature_ids);
    CHECK_FALSE(a.truth == c.truth);
    for (double v : a.truth.data()) CHECK(std::isfinite(v));
  }

  TEST_CASE("a new period keeps statics and sites and redraws dynamics") {
    SceneConfig cfg = small_config(5);
    const SyntheticScene a = generate_scene(cfg);
    cfg.period = 1;
    const SyntheticScene b = generate_scene(cfg);
    CHECK(a.features.statics == b.features.statics);
    CHECK(a.sensor_cells == b.sensor_cells);
    CHECK(a.relevant_feature_ids == b.relevant_feature_ids);
    CHECK_FALSE(a.features.dynamic == b.features.dynamic);
    CHECK_FALSE(a.truth == b.truth);
  }

  TEST_CASE("clustered placement fills one quadrant") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SceneConfig cfg = small_config(seed);
      cfg.height = 24;
      cfg.width = 24;
      cfg.time_steps = 1;
      cfg.n_sensors = 40;
      const SyntheticScene s = generate_scene(cfg);
      std::size_t per[4] = {0, 0, 0, 0};
      for (const Cell& c : s.sensor_cells) ++per[quadrant_of(c, s.features.spec)];
      CHECK(*std::max_element(per, per + 4) >= 28);
      std::vector<Cell> u = s.sensor_cells;
      CHECK(std::unique(u.begin(), u.end()) == u.end());
    }
    // More sensors than one quadrant holds: the quadrant fills, the rest spill.
    SceneConfig big = small_config(1);
    big.height = 4;
    big.width = 4;
    big.time_steps = 1;
    big.n_sensors = 16;
    CHECK(generate_scene(big).sensor_cells.size() == 16);
  }

  TEST_CASE("truth is the smoothed feature function plus a small latent field") {
    const SyntheticScene s = generate_scene(small_config(12));
    CHECK(s.relevant_feature_ids.size() == 3);
    CHECK(s.relevant_feature_ids[0] < s.config.dynamic_features);
    for (std::size_t t = 0; t < s.config.time_steps; ++t) {
      const Tensor g = feature_part(s, t);
      double ss = 0.0;
      for (std::size_t r = 0; r < s.config.height; ++r) {
        for (std::size_t c = 0; c < s.config.width; ++c) {
          const double d = s.truth.at({t, r, c}) - g.at({r, c});
          ss += d * d;
        }
      }
      const double rms = std::sqrt(ss / static_cast<double>(s.config.height * s.config.width));
      // The latent field starts standardized and scaled by 0.2; the AR(1)
      // update keeps its variance near one afterwards.
      if (t == 0) {
        CHECK(rms == doctest::Approx(0.2).epsilon(1e-9));
      } else {
        CHECK(rms == doctest::Approx(0.2).epsilon(0.3));
      }
    }
  }

  TEST_CASE("permuting irrelevant channels leaves the truth unchanged") {
    const SyntheticScene s = generate_scene(small_config(21));
    const std::size_t p = s.config.dynamic_features + s.config.static_features;
    std::vector<std::size_t> irrelevant;
    for (std::size_t k = s.config.dynamic_features; k < p; ++k) {
      if (std::find(s.relevant_feature_ids.begin(), s.relevant_feature_ids.end(), k) ==
          s.relevant_feature_ids.end()) {
        irrelevant.push_back(k);
      }
    }
    REQUIRE(irrelevant.size() >= 2);
    SyntheticScene permuted = s;
    const std::size_t pd = s.config.dynamic_features;
    for (std::size_t r = 0; r < s.config.height; ++r) {
      for (std::size_t c = 0; c < s.config.width; ++c) {
        std::swap(permuted.features.statics.at({r, c, irrelevant[0] - pd}),
                  permuted.features.statics.at({r, c, irrelevant[1] - pd}));
      }
    }
    CHECK_FALSE(permuted.features.statics == s.features.statics);
    for (std::size_t t = 0; t < s.config.time_steps; ++t) {
      CHECK(feature_part(permuted, t) == feature_part(s, t));
    }
  }

  TEST_CASE("lag-one autocorrelation tracks temporal_ar") {
    auto lag1 = [](const SyntheticScene& s) {
      const std::size_t steps = s.config.time_steps;
      const std::size_t hw = s.config.height * s.config.width;
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        double mean = 0.0;
        for (std::size_t t = 0; t < steps; ++t) mean += s.truth[t * hw + i];
        mean /= static_cast<double>(steps);
        for (std::size_t t = 0; t < steps; ++t) {
          const double d = s.truth[t * hw + i] - mean;
          den += d * d;
          if (t + 1 < steps) num += d * (s.truth[(t + 1) * hw + i] - mean);
        }
      }
      return num / den;
    };
    for (double ar : {0.0, 0.7}) {
      SceneConfig cfg = small_config(3);
      cfg.time_steps = 200;
      cfg.temporal_ar = ar;
      CHECK(std::abs(lag1(generate_scene(cfg)) - ar) <= 0.1);
    }
  }

  TEST_CASE("gaussian_smooth matches a direct kernel sum") {
    Rng rng(8);
    Tensor f({7, 9});
    for (double& v : f.data()) v = rng.normal();
    CHECK(gaussian_smooth(f, 0.0) == f);
    CHECK(gaussian_smooth(Tensor({5, 5}, 2.5), 1.3) == Tensor({5, 5}, 2.5));
    const double len = 1.2;
    const int radius = 4;
    const Tensor got = gaussian_smooth(f, len);
    for (int r = 0; r < 7; ++r) {
      for (int c = 0; c < 9; ++c) {
        double acc = 0.0, norm = 0.0;
        for (int rr = r - radius; rr <= r + radius; ++rr) {
          for (int cc = c - radius; cc <= c + radius; ++cc) {
            if (rr < 0 || rr >= 7 || cc < 0 || cc >= 9) continue;
            const double k = std::exp(-((rr - r) * (rr - r) + (cc - c) * (cc - c)) / (2 * len * len));
            acc += k * f.at({static_cast<std::size_t>(rr), static_cast<std::size_t>(cc)});
            norm += k;
          }
        }
        CHECK(got.at({static_cast<std::size_t>(r), static_cast<std::size_t>(c)}) ==
              doctest::Approx(acc / norm).epsilon(1e-12));
      }
    }
    CHECK_THROWS_AS(gaussian_smooth(Tensor({3}), 1.0), ShapeError);
  }

  TEST_CASE("config validation and JSON") {
    SceneConfig c = small_config(0);
    c.n_relevant = 7;
    CHECK_THROWS_AS(generate_scene(c), ConfigError);
    c = small_config(0);
    c.n_sensors = 121;
    CHECK_THROWS_AS(generate_scene(c), ConfigError);
    c = small_config(0);
    c.temporal_ar = 1.0;
    CHECK_THROWS_AS(generate_scene(c), ConfigError);
    c = small_config(0);
    c.noise_std = -0.1;
    CHECK_THROWS_AS(generate_scene(c), ConfigError);

    c = small_config(33);
    c.placement = SensorPlacement::kUniform;
    c.period = 2;
    const SceneConfig back = scene_config_from_json(scene_config_to_json(c));
    CHECK(scene_config_to_json(back) == scene_config_to_json(c));
    CHECK_THROWS_AS(scene_config_from_json(nlohmann::json{{"sensor_placement", "grid"}}), ConfigError);
    CHECK_THROWS_AS(scene_config_from_json(nlohmann::json{{"height", "tall"}}), ConfigError);
  }

  TEST_CASE("scene readings list every sensor at every step") {
    SceneConfig cfg = small_config(6);
    const SyntheticScene s = generate_scene(cfg);
    const auto rs = scene_readings(s);
    REQUIRE(rs.size() == cfg.n_sensors * cfg.time_steps);
    const Cell first = s.sensor_cells.front();
    const auto [e, n] = s.features.spec.cell_center(first);
    CHECK(rs[0].easting == e);
    CHECK(rs[0].northing == n);
    CHECK(rs[0].time_index == 0);
    CHECK(rs[0].value == s.labels.value(0, first));
  }
}
