#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latte/autodiff.hpp"
#include "latte/network.hpp"
#include "latte/variogram.hpp"

namespace latte {

struct LossWeights {
  double alpha = 1.0;   // sparse L1
  double beta = 5.0;    // reconstruction
  double lambda = 5.0;  // representation constraint
  double eta = 0.1;     // autocorrelation
  double lambda1 = 1.0; // spatial part of the representation constraint
  double lambda2 = 1.0; // temporal part

  void validate() const;
};

struct NeighborhoodSpec {
  std::size_t k_s = 1;
  std::size_t k_t = 1;
};

inline constexpr double kSigmaFloor = 1e-6;

// Sum of |w_p| over the sparse-layer diagonal.
Var loss_sp(Var sparse_weights);
double loss_sp(const SparseLayer& layer);

// Mean squared reconstruction error over all entries.
Var loss_ae(Var x_sp, Var x_hat);

// Representation constraint over R with axes [T, ..., H, W, C]. For each
// ordered neighbor pair (i, j) with j in the Chebyshev ring k <= K_S (same
// time) or at t +/- k, k <= K_T (same cell), adds (1/k) * mean_C (R_i-R_j)^2,
// weighted by lambda1 (space) / lambda2 (time). Border cells only use the
// neighbors that exist.
Var loss_stc(Var embeddings, const NeighborhoodSpec& spec, double lambda1,
             double lambda2);

// (1/m) * sum over mask of (y - y_hat)^2.
Var loss_pred(Var predictions, const Tensor& labels, const Tensor& mask);

// KL(N(mu_y, sigma_y) || N(mu_hat, sigma_hat)).
double kl_gaussian(double mu_y, double sigma_y, double mu_hat, double sigma_hat);

struct BinPair {
  BinDistribution label;
  BinDistribution prediction;
  bool valid() const { return label.valid && prediction.valid; }
};

struct AutocorrelationValue {
  double value = 0.0;
  std::size_t valid_bins = 0;
  bool no_valid_bins() const { return valid_bins == 0; }
};

// Sum of kl_gaussian over valid bins after adding sigma_floor in quadrature
// to both standard deviations. Invalid bins contribute 0.
AutocorrelationValue loss_ac(std::span<const BinPair> bins,
                             double sigma_floor = kSigmaFloor);

// Differentiable autocorrelation loss over predictions (flattened, [n]).
// Pair membership, label statistics and the fitted range are constants; the
// gradient flows through the prediction-side mean and variance only.
struct AutocorrelationInputs {
  std::span<const LagPair> prediction_pairs;
  std::span<const BinDistribution> label_bins;
  VariogramModel model;
  double lag_size = 0.1;
  std::size_t min_pairs = 5;
  double sigma_floor = kSigmaFloor;
};

struct AutocorrelationLoss {
  Var value;
  std::size_t valid_bins = 0;
};

AutocorrelationLoss loss_ac(Var predictions, const AutocorrelationInputs& in);

struct LossParts {
  double pred = 0.0;
  double sp = 0.0;
  double ae = 0.0;
  double stc = 0.0;
  double ac = 0.0;
};

// L_pred + alpha L_sp + beta L_ae + lambda L_stc + eta L_ac.
double loss_total(const LossParts& parts, const LossWeights& weights);

struct LossVars {
  Var pred, sp, ae, stc, ac;
};
Var loss_total(const LossVars& parts, const LossWeights& weights);

}  // namespace latte
