#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latte/grid.hpp"
#include "latte/losses.hpp"
#include "latte/network.hpp"
#include "latte/tensor.hpp"
#include "latte/variogram.hpp"

namespace latte {

// Features and labels for one period, time-major.
struct TrainingSet {
  GridSpec spec;
  Tensor features;  // [T, H, W, P], raw units
  Tensor labels;    // [T, H, W]
  Tensor mask;      // [T, H, W]

  std::size_t time_steps() const { return features.dim(0); }
  std::size_t feature_count() const { return features.dim(3); }
};

TrainingSet make_training_set(const FeatureGrid& features, const LabelGrid& labels);

struct TrainConfig {
  LossWeights weights;
  double lr = 1e-3;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch = 1;                  // windows per optimizer step
  std::size_t variogram_refit_every = 1;  // epochs
  double lag_size = 0.1;
  std::size_t min_pairs = 5;
  std::uint64_t seed = 0;
  double clip_norm = 5.0;
  std::size_t pretrain_epochs = 0;
  double pretrain_lr = 1e-2;
  // Prediction-side pair subsampling for the autocorrelation loss.
  std::size_t max_points = 2000;
  std::size_t pair_budget = 2'000'000;

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j, std::size_t n_features);
nlohmann::json model_config_to_json(const ModelConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;
  LossParts parts;   // means over the epoch's steps
  double total = 0.0;
  double val_rmse = 0.0;
  double best_val_rmse = 0.0;
  bool variogram_fitted = false;
  VariogramModel variogram;  // in force during the epoch
  std::size_t selected_count = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  // Number of autocorrelation-loss evaluations and variogram fits performed.
  std::size_t ac_evaluations = 0;
  std::size_t variogram_fits = 0;
  std::vector<nlohmann::json> variogram_reports;

  std::string to_csv() const;
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

// Adam with global-norm clipping.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update. `grads` are scaled in place when their global norm
  // exceeds clip_norm (clip_norm <= 0 disables clipping).
  void step(const std::vector<Tensor*>& params, std::vector<Tensor>& grads,
            double clip_norm);
  // Clears the moment estimates of entry `index` of parameter `param`.
  void reset_entry(std::size_t param, std::size_t index);
  std::size_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

// Sets model.normalizer: feature standardization over every cell and time,
// label standardization over the labeled train cells.
void fit_normalizer(Model& model, const TrainingSet& data,
                    const std::vector<Cell>& train_cells);

// Minimizes the reconstruction loss only; updates encoder and decoder.
// Returns the full-data reconstruction MSE after each epoch.
std::vector<double> pretrain_autoencoder(Model& model, const Tensor& features,
                                         std::size_t epochs, double lr,
                                         std::uint64_t seed,
                                         std::size_t batch_rows = 256);

// Joint optimization of the total loss over sliding windows ending at every
// t >= window - 1. Returns the parameters of the best validation epoch.
// Normalizer statistics are fitted from `data` unless keep_normalizer is set.
TrainResult train(Model model, const TrainingSet& data, const LocationSplit& split,
                  const TrainConfig& cfg, bool keep_normalizer = false);

// Continues training on a new period. Raises SplitLeakError when a new test or
// validation cell was a train cell of an earlier period.
TrainResult fine_tune(Model model, const TrainingSet& data,
                      const LocationSplit& split,
                      const std::vector<Cell>& prior_train_cells,
                      const TrainConfig& cfg);

// Predictions in label units for times [t_begin, t_end): [t_end - t_begin, H, W].
// Times before window - 1 use the shorter history available.
Tensor predict_field(const Model& model, const Tensor& features,
                     std::size_t t_begin, std::size_t t_end);

// Spatiotemporal embedding R_t of every cell: [H, W, C].
Tensor embeddings_at(const Model& model, const Tensor& features, std::size_t t);

struct Metrics {
  double rmse = 0.0;
  double r2 = 0.0;
  bool r2_defined = false;
  std::size_t count = 0;
};

Metrics evaluate(const Tensor& predictions, const Tensor& labels, const Tensor& mask);

// Mask [T, H, W] that keeps `observed` at `cells` and is zero elsewhere.
Tensor cell_mask(const std::vector<Cell>& cells, const Tensor& observed);

nlohmann::json metrics_to_json(const Metrics& m);

}  // namespace latte
