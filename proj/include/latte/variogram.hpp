#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "latte/rng.hpp"
#include "latte/tensor.hpp"

namespace latte {

// One ordered point pair (i, j), i != j, with its lag on the binning axis.
struct LagPair {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  double lag = 0.0;
};

// Largest Euclidean distance between rows of `points` ([n, d]).
double max_pairwise_distance(const Tensor& points);

// [n, n] Euclidean distances divided by the largest pairwise distance, so the
// result lies in [0, 1] with maximum exactly 1. Needs n >= 2.
Tensor pairwise_lags(const Tensor& points);

// Every ordered pair (i != j) of the [n, n] lag matrix.
std::vector<LagPair> pairs_from_lags(const Tensor& lags);

// Ordered pairs of rows of `points` with lag = distance / denominator,
// clamped to 1. All n (n - 1) pairs when n <= max_points; otherwise
// `pair_budget` ordered pairs drawn uniformly with `rng`.
std::vector<LagPair> sample_pairs(const Tensor& points, double denominator,
                                  std::size_t max_points,
                                  std::size_t pair_budget, Rng& rng);

// Equal-width bins over [0, max_lag]. A lag equal to max_lag falls in the
// last bin.
struct VariogramBins {
  double lag_size = 0.1;
  double max_lag = 1.0;
  std::vector<std::size_t> counts;  // N(h), ordered pairs
  std::vector<double> gamma;        // meaningful only where counts > 0

  std::size_t size() const { return counts.size(); }
  double center(std::size_t b) const {
    return (static_cast<double>(b) + 0.5) * lag_size;
  }
  bool populated(std::size_t b) const { return counts[b] > 0; }
  std::size_t populated_count() const;
  std::size_t bin_of(double lag) const;
};

std::size_t bin_count(double lag_size, double max_lag = 1.0);

// gamma(h) = (1 / N(h)) * sum over ordered pairs in the bin of
// (Y_i - Y_j)^2. There is no 1/2 factor.
VariogramBins empirical_semivariogram(const Tensor& lags,
                                      std::span<const double> values,
                                      double lag_size);
VariogramBins empirical_semivariogram(std::span<const LagPair> pairs,
                                      std::span<const double> values,
                                      double lag_size, double max_lag = 1.0);

// Gaussian family f(h) = n + s * (1 - exp(-h^2 / (r/2)^2)).
struct VariogramModel {
  double nugget = 0.0;
  double sill = 1.0;
  double range = 1.0;

  double operator()(double h) const;
};

struct FitOptions {
  bool fix_nugget_zero = true;
  // Admissible range interval. The lower bound is where a flat plateau pins.
  double range_lower = 1e-3;
  double range_upper = 1.0;
  // Seeded extra starts on top of r in {0.2, 0.5, 0.8} * range_upper.
  std::size_t random_starts = 2;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 500;
};

struct FitResult {
  VariogramModel model;
  // Weighted sum of squared residuals, sum_b N(h_b) (f(h_b) - gamma_b)^2.
  double residual = 0.0;
  bool converged = false;
  // Set when the best range sits on range_lower (a plateau with no
  // detectable autocorrelation).
  bool range_at_lower_bound = false;
};

// Weighted least squares (weights N(h)) over populated bin centers, solved by
// multi-start projected Levenberg-Marquardt.
FitResult fit_gaussian_model(const VariogramBins& bins,
                             const FitOptions& options = {});

struct BinDistribution {
  std::size_t bin = 0;
  double mu = 0.0;     // mean of squared pair differences
  double sigma = 0.0;  // population std of squared pair differences
  std::size_t count = 0;
  bool valid = false;  // center <= range and count >= min_pairs
};

std::vector<BinDistribution> bin_distributions(const Tensor& lags,
                                               std::span<const double> values,
                                               const VariogramModel& model,
                                               double lag_size,
                                               std::size_t min_pairs);
std::vector<BinDistribution> bin_distributions(std::span<const LagPair> pairs,
                                               std::span<const double> values,
                                               const VariogramModel& model,
                                               double lag_size,
                                               std::size_t min_pairs,
                                               double max_lag = 1.0);

// Report with bins (center, N, gamma), fitted (n, s, r) and per-bin validity.
nlohmann::json variogram_report(const VariogramBins& bins, const FitResult& fit,
                                std::size_t min_pairs);

}  // namespace latte
