#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "latte/grid.hpp"
#include "latte/variogram.hpp"

namespace latte {

struct Observation {
  double easting = 0.0;
  double northing = 0.0;
  double value = 0.0;
};

using ObservationSet = std::vector<Observation>;
using Coordinate = std::pair<double, double>;  // (easting, northing)

// Inverse distance weighting with weights d^-power. A target within 1e-9 m
// of an observation returns that observation's value.
std::vector<double> idw_predict(const ObservationSet& obs,
                                std::span<const Coordinate> targets,
                                double power = 2.0);

struct KrigingOptions {
  std::size_t n_bins = 10;
  std::uint64_t seed = 0;
};

// Ordinary kriging with a Gaussian variogram (nugget 0) fitted on raw-meter
// lags, n_bins equal-width bins up to the largest pairwise distance. The
// system [gamma(d_ij) 1; 1^T 0] [w; mu] = [gamma(d_i*); 1] is factorized once
// by Gaussian elimination with partial pivoting and reused for every target.
class OrdinaryKriging {
 public:
  static OrdinaryKriging fit(const ObservationSet& obs,
                             const KrigingOptions& options = {});

  double predict(Coordinate target) const;
  std::vector<double> predict(std::span<const Coordinate> targets) const;

  struct Solution {
    std::vector<double> weights;
    double multiplier = 0.0;  // Lagrange multiplier of the unit-sum constraint
  };
  Solution solve(Coordinate target) const;

  const VariogramModel& variogram() const { return model_; }
  // Observations after merging duplicate coordinates.
  const ObservationSet& points() const { return points_; }

 private:
  ObservationSet points_;
  VariogramModel model_;
  std::vector<double> lu_;  // packed (n+1)^2 LU factors
  std::vector<std::size_t> pivots_;
};

std::vector<double> ok_predict(const ObservationSet& obs,
                               std::span<const Coordinate> targets,
                               const KrigingOptions& options = {});

enum class BaselineMethod { kIdw, kOk };

// For each t in [t_begin, t_end), interpolates the labels observed at `cells`
// (cell centers) onto every cell center: [t_end - t_begin, H, W].
Tensor interpolate_field(const LabelGrid& labels, const GridSpec& spec,
                         const std::vector<Cell>& cells, BaselineMethod method,
                         std::size_t t_begin, std::size_t t_end);

}  // namespace latte
