#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latte/tensor.hpp"

namespace latte {

struct Cell {
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const Cell&) const = default;
};

// Planar raster. Cell (r, c) covers easting
// [origin_e + c*cell_size, origin_e + (c+1)*cell_size) and northing
// [origin_n + r*cell_size, origin_n + (r+1)*cell_size); row index grows with
// northing.
struct GridSpec {
  double origin_easting = 0.0;
  double origin_northing = 0.0;
  double cell_size = 1.0;
  std::size_t height = 1;
  std::size_t width = 1;

  void validate() const;
  std::size_t cell_count() const { return height * width; }
  double max_easting() const { return origin_easting + cell_size * width; }
  double max_northing() const { return origin_northing + cell_size * height; }
  std::optional<Cell> cell_of(double easting, double northing) const;
  std::pair<double, double> cell_center(Cell cell) const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Static and dynamic features on a grid. The per-cell feature vector is the
// dynamic channels followed by the static channels, in `feature_names` order.
struct FeatureGrid {
  GridSpec spec;
  std::size_t time_steps = 0;
  Tensor dynamic;  // [time, H, W, P_d]
  Tensor statics;  // [H, W, P_s]
  std::vector<std::string> feature_names;

  std::size_t dynamic_count() const { return dynamic.shape().at(3); }
  std::size_t static_count() const { return statics.shape().at(2); }
  std::size_t feature_count() const { return feature_names.size(); }

  void validate() const;
  // Per-cell feature vectors at one time: [H, W, P].
  Tensor frame(std::size_t t) const;
};

struct LabelGrid {
  Tensor values;  // [time, H, W]
  Tensor mask;    // [time, H, W], 1 = observed, 0 = missing

  static LabelGrid empty(std::size_t time_steps, const GridSpec& spec);

  std::size_t time_steps() const { return values.shape().at(0); }
  bool observed(std::size_t t, Cell cell) const;
  double value(std::size_t t, Cell cell) const;
  std::size_t observed_count(std::size_t t) const;
  // Cells observed at any time step, sorted.
  std::vector<Cell> labeled_cells() const;
  void validate() const;
};

enum class PrimitiveKind { kPoint, kPolyline, kPolygon };

struct GeoPrimitive {
  PrimitiveKind kind = PrimitiveKind::kPoint;
  std::vector<std::pair<double, double>> coords;  // (easting, northing)
  double attribute = 0.0;

  // Checks vertex-count rules. A polygon ring is closed implicitly; a repeated
  // closing vertex is accepted.
  void validate() const;
};

struct SensorReading {
  std::string sensor_id;
  double easting = 0.0;
  double northing = 0.0;
  std::int64_t time_index = 0;
  double value = 0.0;
};

enum class Aggregator { kSumLength, kSumArea, kCount, kMeanAttribute };

// Per-cell aggregate of the primitive portions intersecting each cell.
// Geometry is clipped exactly against the cell rectangles.
Tensor rasterize_features(const std::vector<GeoPrimitive>& primitives,
                          const GridSpec& spec, Aggregator aggregator);

// A coarse, uniformly sampled field; samples sit at the coarse cell centers.
struct CoarseField {
  GridSpec spec;
  Tensor values;  // [h, w]
};

// Bicubic convolution (Keys kernel, a = -0.5) evaluated at the target cell
// centers. Samples beyond the coarse border are extended with the cubic
// boundary condition f(-1) = 3 f(0) - 3 f(1) + f(2).
Tensor upscale_cubic(const CoarseField& coarse, const GridSpec& target);

// Keys cubic convolution kernel with a = -0.5.
double cubic_kernel(double x);

struct SensorMapping {
  LabelGrid labels;
  std::vector<SensorReading> rejected;
};

SensorMapping map_sensors_to_labels(const std::vector<SensorReading>& readings,
                                    const GridSpec& spec,
                                    std::size_t time_steps);

struct LocationSplit {
  std::vector<Cell> train;
  std::vector<Cell> val;
  std::vector<Cell> test;
};

// Quadrant index in {0,1,2,3}: blocks split at row H/2 and column W/2.
std::size_t quadrant_of(Cell cell, const GridSpec& spec);

// Per quadrant, a seeded shuffle assigns floor(0.6 n) cells to train,
// floor(0.2 n) to validation and the remainder to test.
LocationSplit split_locations(std::vector<Cell> cells, const GridSpec& spec,
                              std::uint64_t seed);

}  // namespace latte
