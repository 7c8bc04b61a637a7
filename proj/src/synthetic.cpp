#include "latte/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "latte/error.hpp"
#include "latte/rng.hpp"

namespace latte {

namespace {

constexpr double kLatentAmplitude = 0.2;
constexpr double kInteraction = 0.6;

double linear_coefficient(std::size_t k) {
  static constexpr double c[] = {1.0, 0.8, 0.6, 0.5};
  return k < 4 ? c[k] : 0.4;
}

// Independent stream per (seed, purpose), insensitive to call order.
Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return Rng(z ^ (z >> 31));
}

void standardize(Tensor& field) {
  double mean = 0.0;
  for (double v : field.data()) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (double v : field.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(field.size());
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;
  for (double& v : field.data()) v = (v - mean) / sd;
}

Tensor smooth_noise(std::size_t h, std::size_t w, double length, Rng& rng) {
  Tensor f({h, w});
  for (double& v : f.data()) v = rng.normal();
  f = gaussian_smooth(f, length);
  standardize(f);
  return f;
}

}  // namespace

void SceneConfig::validate() const {
  if (height == 0 || width == 0 || time_steps == 0) {
    throw ConfigError("scene dimensions must be positive");
  }
  const std::size_t p = dynamic_features + static_features;
  if (p == 0) throw ConfigError("scene needs at least one feature");
  if (n_relevant == 0 || n_relevant > p) {
    throw ConfigError("n_relevant must lie in [1, P_d + P_s]");
  }
  if (n_sensors == 0 || n_sensors > height * width) {
    throw ConfigError("n_sensors must lie in [1, H * W]");
  }
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
    throw ConfigError("noise_std must be finite and nonnegative");
  }
  if (!(spatial_corr_length >= 0.0) || !(feature_corr_length >= 0.0)) {
    throw ConfigError("correlation lengths must be nonnegative");
  }
  if (!(temporal_ar >= 0.0 && temporal_ar < 1.0)) {
    throw ConfigError("temporal_ar must lie in [0, 1)");
  }
  if (!(cell_size > 0.0)) throw ConfigError("cell_size must be positive");
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  try {
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.time_steps = j.value("time_steps", c.time_steps);
    c.dynamic_features = j.value("dynamic_features", c.dynamic_features);
    c.static_features = j.value("static_features", c.static_features);
    c.n_relevant = j.value("n_relevant", c.n_relevant);
    c.n_sensors = j.value("n_sensors", c.n_sensors);
    const std::string placement = j.value("sensor_placement", std::string("clustered"));
    if (placement == "uniform") {
      c.placement = SensorPlacement::kUniform;
    } else if (placement == "clustered") {
      c.placement = SensorPlacement::kClustered;
    } else {
      throw ConfigError("sensor_placement must be 'uniform' or 'clustered'");
    }
    c.noise_std = j.value("noise_std", c.noise_std);
    c.spatial_corr_length = j.value("spatial_corr_length", c.spatial_corr_length);
    c.feature_corr_length = j.value("feature_corr_length", c.feature_corr_length);
    c.temporal_ar = j.value("temporal_ar", c.temporal_ar);
    c.cell_size = j.value("cell_size", c.cell_size);
    c.seed = j.value("seed", c.seed);
    c.period = j.value("period", c.period);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json scene_config_to_json(const SceneConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"time_steps", c.time_steps},
          {"dynamic_features", c.dynamic_features},
          {"static_features", c.static_features},
          {"n_relevant", c.n_relevant},
          {"n_sensors", c.n_sensors},
          {"sensor_placement",
           c.placement == SensorPlacement::kUniform ? "uniform" : "clustered"},
          {"noise_std", c.noise_std},
          {"spatial_corr_length", c.spatial_corr_length},
          {"feature_corr_length", c.feature_corr_length},
          {"temporal_ar", c.temporal_ar},
          {"cell_size", c.cell_size},
          {"seed", c.seed},
          {"period", c.period}};
}

Tensor gaussian_smooth(const Tensor& field, double length) {
  if (field.rank() != 2) throw ShapeError("gaussian_smooth expects [H, W]");
  if (length <= 0.0) return field;
  const std::size_t h = field.dim(0), w = field.dim(1);
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * length));
  std::vector<double> kernel(2 * radius + 1);
  for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
    kernel[d + radius] = std::exp(-0.5 * static_cast<double>(d * d) / (length * length));
  }
  auto pass = [&](const Tensor& in, bool along_rows) {
    Tensor out({h, w});
    const auto n = static_cast<std::ptrdiff_t>(along_rows ? h : w);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const auto pos = static_cast<std::ptrdiff_t>(along_rows ? r : c);
        double acc = 0.0, norm = 0.0;
        for (std::ptrdiff_t d = -radius; d <= radius; ++d) {
          const std::ptrdiff_t q = pos + d;
          if (q < 0 || q >= n) continue;
          const double k = kernel[d + radius];
          const auto uq = static_cast<std::size_t>(q);
          acc += k * (along_rows ? in[uq * w + c] : in[r * w + uq]);
          norm += k;
        }
        out[r * w + c] = acc / norm;
      }
    }
    return out;
  };
  return pass(pass(field, true), false);
}

SyntheticScene generate_scene(const SceneConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.height, w = cfg.width, steps = cfg.time_steps;
  const std::size_t pd = cfg.dynamic_features, ps = cfg.static_features;
  const std::size_t hw = h * w;
  const double ar = cfg.temporal_ar;
  const double innovation = std::sqrt(1.0 - ar * ar);

  SyntheticScene scene;
  scene.config = cfg;
  FeatureGrid& fg = scene.features;
  fg.spec = GridSpec{0.0, 0.0, cfg.cell_size, h, w};
  fg.time_steps = steps;
  for (std::size_t k = 0; k < pd; ++k) fg.feature_names.push_back("dyn_" + std::to_string(k));
  for (std::size_t k = 0; k < ps; ++k) fg.feature_names.push_back("static_" + std::to_string(k));

  // Static features depend on the seed only.
  Rng static_rng = stream(cfg.seed, 1);
  fg.statics = Tensor({h, w, ps});
  for (std::size_t k = 0; k < ps; ++k) {
    const Tensor f = smooth_noise(h, w, cfg.feature_corr_length, static_rng);
    for (std::size_t i = 0; i < hw; ++i) fg.statics[i * ps + k] = f[i];
  }

  // Dynamic features: stationary AR(1) in time per cell.
  Rng dyn_rng = stream(cfg.seed, 100 + 3 * cfg.period);
  fg.dynamic = Tensor({steps, h, w, pd});
  for (std::size_t k = 0; k < pd; ++k) {
    Tensor prev;
    for (std::size_t t = 0; t < steps; ++t) {
      Tensor eps = smooth_noise(h, w, cfg.feature_corr_length, dyn_rng);
      if (t > 0) {
        for (std::size_t i = 0; i < hw; ++i) eps[i] = ar * prev[i] + innovation * eps[i];
      }
      for (std::size_t i = 0; i < hw; ++i) fg.dynamic[(t * hw + i) * pd + k] = eps[i];
      prev = std::move(eps);
    }
  }

  // Relevant features: one dynamic feature (when there is one), then statics,
  // then the remaining dynamics.
  Rng pick_rng = stream(cfg.seed, 3);
  std::vector<std::size_t> dyn_ids(pd), static_ids(ps);
  for (std::size_t k = 0; k < pd; ++k) dyn_ids[k] = k;
  for (std::size_t k = 0; k < ps; ++k) static_ids[k] = pd + k;
  pick_rng.shuffle(std::span<std::size_t>(dyn_ids));
  pick_rng.shuffle(std::span<std::size_t>(static_ids));
  std::vector<std::size_t> order;
  if (pd > 0) order.push_back(dyn_ids[0]);
  order.insert(order.end(), static_ids.begin(), static_ids.end());
  if (pd > 1) order.insert(order.end(), dyn_ids.begin() + 1, dyn_ids.end());
  scene.relevant_feature_ids.assign(order.begin(), order.begin() + cfg.n_relevant);

  auto feature = [&](std::size_t t, std::size_t i, std::size_t id) {
    return id < pd ? fg.dynamic[(t * hw + i) * pd + id] : fg.statics[i * ps + (id - pd)];
  };

  Rng latent_rng = stream(cfg.seed, 101 + 3 * cfg.period);
  scene.truth = Tensor({steps, h, w});
  Tensor latent;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor g({h, w});
    for (std::size_t i = 0; i < hw; ++i) {
      double v = 0.0;
      for (std::size_t k = 0; k < scene.relevant_feature_ids.size(); ++k) {
        v += linear_coefficient(k) * feature(t, i, scene.relevant_feature_ids[k]);
      }
      if (scene.relevant_feature_ids.size() >= 2) {
        v += kInteraction * feature(t, i, scene.relevant_feature_ids[0]) *
             feature(t, i, scene.relevant_feature_ids[1]);
      }
      g[i] = v;
    }
    g = gaussian_smooth(g, cfg.spatial_corr_length);
    Tensor eps = smooth_noise(h, w, cfg.spatial_corr_length, latent_rng);
    if (t > 0) {
      for (std::size_t i = 0; i < hw; ++i) eps[i] = ar * latent[i] + innovation * eps[i];
    }
    latent = std::move(eps);
    for (std::size_t i = 0; i < hw; ++i) {
      scene.truth[t * hw + i] = g[i] + kLatentAmplitude * latent[i];
    }
  }

  // Sensor sites depend on the seed only.
  Rng site_rng = stream(cfg.seed, 2);
  std::vector<std::size_t> all(hw);
  for (std::size_t i = 0; i < hw; ++i) all[i] = i;
  site_rng.shuffle(std::span<std::size_t>(all));
  std::vector<std::size_t> chosen;
  if (cfg.placement == SensorPlacement::kUniform) {
    chosen.assign(all.begin(), all.begin() + cfg.n_sensors);
  } else {
    const std::size_t q = site_rng.below(4);
    const std::size_t want = (cfg.n_sensors * 4 + 4) / 5;  // ceil(0.8 n)
    std::vector<std::size_t> inside, outside;
    for (std::size_t i : all) {
      (quadrant_of(Cell{i / w, i % w}, fg.spec) == q ? inside : outside).push_back(i);
    }
    const std::size_t n_in = std::min(want, inside.size());
    chosen.assign(inside.begin(), inside.begin() + n_in);
    std::size_t k = 0;
    while (chosen.size() < cfg.n_sensors && k < outside.size()) chosen.push_back(outside[k++]);
    k = n_in;
    while (chosen.size() < cfg.n_sensors) chosen.push_back(inside[k++]);
  }
  std::sort(chosen.begin(), chosen.end());

  Rng noise_rng = stream(cfg.seed, 102 + 3 * cfg.period);
  scene.labels = LabelGrid::empty(steps, fg.spec);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i : chosen) {
      const double noise = cfg.noise_std > 0.0 ? cfg.noise_std * noise_rng.normal() : 0.0;
      scene.labels.values[t * hw + i] = scene.truth[t * hw + i] + noise;
      scene.labels.mask[t * hw + i] = 1.0;
    }
  }
  for (std::size_t i : chosen) scene.sensor_cells.push_back(Cell{i / w, i % w});
  fg.validate();
  return scene;
}

std::vector<SensorReading> scene_readings(const SyntheticScene& scene) {
  std::vector<SensorReading> out;
  const GridSpec& spec = scene.features.spec;
  for (std::size_t t = 0; t < scene.labels.time_steps(); ++t) {
    for (const Cell& c : scene.sensor_cells) {
      const auto [e, n] = spec.cell_center(c);
      out.push_back({"s" + std::to_string(c.row) + "_" + std::to_string(c.col), e, n,
                     static_cast<std::int64_t>(t), scene.labels.value(t, c)});
    }
  }
  return out;
}

}  // namespace latte
