#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "latte/grid.hpp"
#include "latte/tensor.hpp"

namespace latte {

enum class SensorPlacement { kUniform, kClustered };

struct SceneConfig {
  std::size_t height = 24;
  std::size_t width = 24;
  std::size_t time_steps = 48;
  std::size_t dynamic_features = 5;   // P_d
  std::size_t static_features = 15;   // P_s
  std::size_t n_relevant = 3;
  std::size_t n_sensors = 40;
  SensorPlacement placement = SensorPlacement::kClustered;
  double noise_std = 0.3;
  double spatial_corr_length = 1.5;   // cells, smoothing of the truth field
  double feature_corr_length = 2.0;   // cells, smoothing of feature fields
  double temporal_ar = 0.7;
  double cell_size = 500.0;           // meters
  std::uint64_t seed = 0;
  // Scenes that share a seed but differ in period keep static features,
  // relevant features and sensor sites; dynamic features and noise change.
  std::uint64_t period = 0;

  void validate() const;
};

SceneConfig scene_config_from_json(const nlohmann::json& j);
nlohmann::json scene_config_to_json(const SceneConfig& cfg);

struct SyntheticScene {
  SceneConfig config;
  FeatureGrid features;
  LabelGrid labels;   // observed at every step at the sensor cells
  Tensor truth;       // [time, H, W]
  std::vector<std::size_t> relevant_feature_ids;  // indices into feature_names
  std::vector<Cell> sensor_cells;                 // sorted
};

// Truth = G_L * g(relevant features) + small AR(1) latent field, where G_L is
// Gaussian smoothing with length spatial_corr_length and
//   g = sum_k c_k z_k + 0.6 z_0 z_1,   c = (1.0, 0.8, 0.6, 0.5, 0.4, ...)
// over the relevant features z (a dynamic one first when P_d > 0). Dynamic
// features are unit-variance AR(1) processes in time with spatially smooth
// innovations; static features are smoothed, standardized noise.
SyntheticScene generate_scene(const SceneConfig& cfg);

// One reading per sensor cell and time step, located at the cell center.
std::vector<SensorReading> scene_readings(const SyntheticScene& scene);

// Separable Gaussian smoothing of an [H, W] field with weights
// exp(-d^2 / (2 length^2)), truncated at 3 length and renormalized at the
// borders. length <= 0 returns the field unchanged.
Tensor gaussian_smooth(const Tensor& field, double length);

}  // namespace latte
