#include "latte/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "latte/error.hpp"
#include "latte/rng.hpp"

namespace latte {

TrainingSet make_training_set(const FeatureGrid& features, const LabelGrid& labels) {
  features.validate();
  labels.validate();
  const std::size_t steps = features.time_steps;
  const std::size_t h = features.spec.height, w = features.spec.width;
  if (labels.values.shape() != Shape{steps, h, w}) {
    throw ShapeError("labels " + shape_string(labels.values.shape()) +
                     " do not match the feature grid");
  }
  const std::size_t p = features.feature_count();
  TrainingSet ts;
  ts.spec = features.spec;
  ts.features = Tensor({steps, h, w, p});
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor f = features.frame(t);
    std::copy(f.data().begin(), f.data().end(),
              ts.features.data().begin() + static_cast<std::ptrdiff_t>(t * f.size()));
  }
  ts.labels = labels.values;
  ts.mask = labels.mask;
  return ts;
}

void TrainConfig::validate() const {
  weights.validate();
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (variogram_refit_every < 1) throw ConfigError("variogram_refit_every must be >= 1");
  if (!(lag_size > 0.0 && lag_size <= 1.0)) throw ConfigError("lag_size must lie in (0, 1]");
  if (min_pairs < 1) throw ConfigError("min_pairs must be >= 1");
  if (max_points < 2 || pair_budget < 1) throw ConfigError("pair subsampling sizes too small");
  if (!(pretrain_lr >= 0.0)) throw ConfigError("pretrain_lr must be >= 0");
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    if (j.contains("weights")) {
      const auto& w = j.at("weights");
      c.weights.alpha = w.value("alpha", c.weights.alpha);
      c.weights.beta = w.value("beta", c.weights.beta);
      c.weights.lambda = w.value("lambda", c.weights.lambda);
      c.weights.eta = w.value("eta", c.weights.eta);
      c.weights.lambda1 = w.value("lambda1", c.weights.lambda1);
      c.weights.lambda2 = w.value("lambda2", c.weights.lambda2);
    }
    c.lr = j.value("lr", c.lr);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.batch = j.value("batch", c.batch);
    c.variogram_refit_every = j.value("variogram_refit_every", c.variogram_refit_every);
    c.lag_size = j.value("lag_size", c.lag_size);
    c.min_pairs = j.value("min_pairs", c.min_pairs);
    c.seed = j.value("seed", c.seed);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
    c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
    c.max_points = j.value("max_points", c.max_points);
    c.pair_budget = j.value("pair_budget", c.pair_budget);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"weights",
           {{"alpha", c.weights.alpha},
            {"beta", c.weights.beta},
            {"lambda", c.weights.lambda},
            {"eta", c.weights.eta},
            {"lambda1", c.weights.lambda1},
            {"lambda2", c.weights.lambda2}}},
          {"lr", c.lr},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch", c.batch},
          {"variogram_refit_every", c.variogram_refit_every},
          {"lag_size", c.lag_size},
          {"min_pairs", c.min_pairs},
          {"seed", c.seed},
          {"clip_norm", c.clip_norm},
          {"pretrain_epochs", c.pretrain_epochs},
          {"pretrain_lr", c.pretrain_lr},
          {"max_points", c.max_points},
          {"pair_budget", c.pair_budget}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, std::size_t n_features) {
  ModelConfig c;
  c.n_features = n_features;
  try {
    c.latent_dim = j.value("latent_dim", c.latent_dim);
    c.ae_hidden = j.value("ae_hidden", c.ae_hidden);
    c.hidden = j.value("hidden", c.hidden);
    c.kernels = j.value("kernels", c.kernels);
    c.head_hidden = j.value("head_hidden", c.head_hidden);
    c.tau = j.value("tau", c.tau);
    c.window = j.value("window", c.window);
    c.k_s = j.value("k_s", c.k_s);
    c.k_t = j.value("k_t", c.k_t);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"n_features", c.n_features}, {"latent_dim", c.latent_dim},
          {"ae_hidden", c.ae_hidden},   {"hidden", c.hidden},
          {"kernels", c.kernels},       {"head_hidden", c.head_hidden},
          {"tau", c.tau},               {"window", c.window},
          {"k_s", c.k_s},               {"k_t", c.k_t}};
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,l_pred,l_sp,l_ae,l_stc,l_ac,total,val_rmse,best_val_rmse,"
        "nugget,sill,range,selected_count\n";
  for (const EpochRecord& e : epochs) {
    os << e.epoch << ',' << e.parts.pred << ',' << e.parts.sp << ',' << e.parts.ae
       << ',' << e.parts.stc << ',' << e.parts.ac << ',' << e.total << ','
       << e.val_rmse << ',' << e.best_val_rmse << ',';
    if (e.variogram_fitted) {
      os << e.variogram.nugget << ',' << e.variogram.sill << ',' << e.variogram.range;
    } else {
      os << ",,";
    }
    os << ',' << e.selected_count << '\n';
  }
  return os.str();
}

void Adam::step(const std::vector<Tensor*>& params, std::vector<Tensor>& grads,
                double clip_norm) {
  if (params.size() != grads.size()) throw ShapeError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Tensor* p : params) {
      m_.emplace_back(p->shape(), 0.0);
      v_.emplace_back(p->shape(), 0.0);
    }
  }
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (const Tensor& g : grads) {
      for (double v : g.data()) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const double s = clip_norm / norm;
      for (Tensor& g : grads) {
        for (double& v : g.data()) v *= s;
      }
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::reset_entry(std::size_t param, std::size_t index) {
  if (param < m_.size()) {
    m_[param][index] = 0.0;
    v_[param][index] = 0.0;
  }
}

void fit_normalizer(Model& model, const TrainingSet& data,
                    const std::vector<Cell>& train_cells) {
  const std::size_t p = data.feature_count();
  const std::size_t rows = data.features.size() / p;
  Normalizer& n = model.normalizer;
  n.feature_mean.assign(p, 0.0);
  n.feature_scale.assign(p, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < p; ++k) n.feature_mean[k] += data.features[r * p + k];
  }
  for (double& m : n.feature_mean) m /= static_cast<double>(rows);
  std::vector<double> var(p, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < p; ++k) {
      const double d = data.features[r * p + k] - n.feature_mean[k];
      var[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < p; ++k) {
    const double sd = std::sqrt(var[k] / static_cast<double>(rows));
    n.feature_scale[k] = sd > 1e-12 ? sd : 1.0;
  }

  const Tensor m = cell_mask(train_cells, data.mask);
  double count = 0.0, sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) continue;
    count += 1.0;
    sum += data.labels[i];
  }
  if (count == 0.0) throw EmptyLabelSet("no labeled train cell to normalize labels");
  n.label_mean = sum / count;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0) sq += (data.labels[i] - n.label_mean) * (data.labels[i] - n.label_mean);
  }
  const double sd = std::sqrt(sq / count);
  n.label_scale = sd > 1e-12 ? sd : 1.0;
}

Tensor cell_mask(const std::vector<Cell>& cells, const Tensor& observed) {
  if (observed.rank() != 3) throw ShapeError("cell_mask expects a [T, H, W] mask");
  const std::size_t steps = observed.dim(0), h = observed.dim(1), w = observed.dim(2);
  Tensor out(observed.shape(), 0.0);
  for (const Cell& c : cells) {
    if (c.row >= h || c.col >= w) throw GridError("cell outside the grid");
    for (std::size_t t = 0; t < steps; ++t) {
      const std::size_t i = (t * h + c.row) * w + c.col;
      out[i] = observed[i] != 0.0 ? 1.0 : 0.0;
    }
  }
  return out;
}

Metrics evaluate(const Tensor& predictions, const Tensor& labels, const Tensor& mask) {
  if (predictions.shape() != labels.shape() || labels.shape() != mask.shape()) {
    throw ShapeError("evaluate: predictions, labels and mask must share a shape");
  }
  Metrics out;
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) continue;
    ++out.count;
    sum += labels[i];
  }
  if (out.count == 0) throw EmptyLabelSet("evaluate: mask selects no cell");
  const double mean = sum / static_cast<double>(out.count);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0.0) continue;
    ss_res += (labels[i] - predictions[i]) * (labels[i] - predictions[i]);
    ss_tot += (labels[i] - mean) * (labels[i] - mean);
  }
  out.rmse = std::sqrt(ss_res / static_cast<double>(out.count));
  out.r2_defined = ss_tot > 0.0;
  out.r2 = out.r2_defined ? 1.0 - ss_res / ss_tot : 0.0;
  return out;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json j = {{"rmse", m.rmse}, {"count", m.count}};
  j["r2"] = m.r2_defined ? nlohmann::json(m.r2) : nlohmann::json(nullptr);
  return j;
}

namespace {

Tensor normalize_features(const Tensor& raw, const Normalizer& n) {
  const std::size_t p = raw.shape().back();
  if (n.feature_mean.size() != p || n.feature_scale.size() != p) {
    throw ShapeError("normalizer has " + std::to_string(n.feature_mean.size()) +
                     " features, data has " + std::to_string(p));
  }
  Tensor out = raw;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t k = i % p;
    d[i] = (d[i] - n.feature_mean[k]) / n.feature_scale[k];
  }
  return out;
}

// [len, B, H, W, P] from normalized features [T, H, W, P]; window b ends at
// ends[b].
Tensor window_batch(const Tensor& xf, std::span<const std::size_t> ends, std::size_t len) {
  const std::size_t frame = xf.size() / xf.dim(0);
  const std::size_t b = ends.size();
  Shape s{len, b};
  s.insert(s.end(), xf.shape().begin() + 1, xf.shape().end());
  Tensor out(s);
  for (std::size_t k = 0; k < len; ++k) {
    for (std::size_t j = 0; j < b; ++j) {
      const std::size_t t = ends[j] + 1 - len + k;
      std::copy_n(xf.data().begin() + static_cast<std::ptrdiff_t>(t * frame), frame,
                  out.data().begin() + static_cast<std::ptrdiff_t>((k * b + j) * frame));
    }
  }
  return out;
}

struct Forward {
  Var x_sp, e, r, r_t, y;  // y: [B, H, W], r_t: [B, H, W, C]
};

Forward forward(const ModelVars& mv, Var x) {
  Forward f;
  f.x_sp = sparse_forward(x, mv.sparse, mv.tau);
  f.e = encode(f.x_sp, mv.autoencoder);
  f.r = st_embed(f.e, mv.branches);
  const std::size_t len = f.r.shape()[0];
  f.r_t = reshape(slice(f.r, 0, len - 1, len),
                  Shape(f.r.shape().begin() + 1, f.r.shape().end()));
  f.y = predict(f.r_t, mv.head);
  return f;
}

struct InferenceOut {
  Tensor y;    // [H, W], normalized label units
  Tensor r_t;  // [H, W, C]
};

InferenceOut infer(const Model& model, const Tensor& xf, std::size_t t) {
  const std::size_t len = std::min(model.config.window, t + 1);
  Tape tape;
  const ModelVars mv = bind(tape, model, false);
  const std::size_t ends[] = {t};
  Forward f = forward(mv, tape.constant(window_batch(xf, ends, len)));
  const Shape& rs = f.r_t.shape();
  return {f.y.value().reshaped({rs[1], rs[2]}),
          f.r_t.value().reshaped({rs[1], rs[2], rs[3]})};
}

Tensor gather_rows(const Tensor& r_t, std::span<const std::size_t> cells) {
  const std::size_t c = r_t.shape().back();
  Tensor out({cells.size(), c});
  for (std::size_t k = 0; k < cells.size(); ++k) {
    std::copy_n(r_t.data().begin() + static_cast<std::ptrdiff_t>(cells[k] * c), c,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * c));
  }
  return out;
}

AutoencoderVars bind_autoencoder(Tape& tape, const Autoencoder& ae) {
  return {tape.leaf(ae.enc_w1), tape.leaf(ae.enc_b1), tape.leaf(ae.enc_w2),
          tape.leaf(ae.enc_b2), tape.leaf(ae.dec_w1), tape.leaf(ae.dec_b1),
          tape.leaf(ae.dec_w2), tape.leaf(ae.dec_b2)};
}

std::vector<Tensor*> autoencoder_params(Autoencoder& ae) {
  return {&ae.enc_w1, &ae.enc_b1, &ae.enc_w2, &ae.enc_b2,
          &ae.dec_w1, &ae.dec_b1, &ae.dec_w2, &ae.dec_b2};
}

std::vector<Var> autoencoder_vars(const AutoencoderVars& v) {
  return {v.enc_w1, v.enc_b1, v.enc_w2, v.enc_b2, v.dec_w1, v.dec_b1, v.dec_w2, v.dec_b2};
}

void check_finite(double v, const char* term) {
  if (!std::isfinite(v)) {
    throw DivergenceError(term, std::string("loss term ") + term + " is not finite");
  }
}

std::size_t count_selected(const SparseLayer& layer) {
  const auto sel = selected_features(layer);
  return static_cast<std::size_t>(std::count(sel.begin(), sel.end(), true));
}

class Trainer {
 public:
  Trainer(Model model, const TrainingSet& data, const LocationSplit& split,
          const TrainConfig& cfg, bool keep_normalizer)
      : model_(std::move(model)), data_(data), split_(split), cfg_(cfg) {
    cfg_.validate();
    if (split.train.empty()) throw EmptyLabelSet("split has no train cell");
    if (data.feature_count() != model_.config.n_features) {
      throw ShapeError("data has " + std::to_string(data.feature_count()) +
                       " features, model expects " +
                       std::to_string(model_.config.n_features));
    }
    if (!keep_normalizer) fit_normalizer(model_, data, split.train);
    const std::size_t win = model_.config.window;
    if (data.time_steps() < win) {
      throw ConfigError("time_steps (" + std::to_string(data.time_steps()) +
                        ") shorter than the window (" + std::to_string(win) + ")");
    }
    for (std::size_t t = win - 1; t < data.time_steps(); ++t) ends_.push_back(t);
    train_mask_ = cell_mask(split.train, data.mask);
    val_mask_ = split.val.empty() ? train_mask_ : cell_mask(split.val, data.mask);
    const std::size_t w = data.spec.width;
    for (const Cell& c : split.train) train_flat_.push_back(c.row * w + c.col);
  }

  TrainResult run() {
    const Normalizer& n = model_.normalizer;
    xf_ = normalize_features(data_.features, n);
    y_std_ = Tensor(data_.labels.shape(), 0.0);
    for (std::size_t i = 0; i < y_std_.size(); ++i) {
      if (data_.mask[i] != 0.0) y_std_[i] = (data_.labels[i] - n.label_mean) / n.label_scale;
    }
    if (cfg_.pretrain_epochs > 0) {
      pretrain_autoencoder(model_, xf_, cfg_.pretrain_epochs, cfg_.pretrain_lr, cfg_.seed);
    }

    Rng rng(cfg_.seed);
    Adam adam(cfg_.lr);
    TrainResult result;
    TrainHistory& hist = result.history;
    double best = std::numeric_limits<double>::infinity();
    Model best_model = model_;
    std::size_t since_best = 0;
    const bool use_ac = cfg_.weights.eta > 0.0;
    std::vector<InferenceOut> cache = infer_all();

    for (std::size_t epoch = 0; epoch < cfg_.max_epochs; ++epoch) {
      if (use_ac && epoch % cfg_.variogram_refit_every == 0) refit(cache, epoch, hist);

      std::vector<std::size_t> order = ends_;
      rng.shuffle(std::span<std::size_t>(order));
      LossParts sum_parts;
      double sum_total = 0.0;
      std::size_t steps = 0;
      for (std::size_t s = 0; s < order.size(); s += cfg_.batch) {
        const std::size_t e = std::min(order.size(), s + cfg_.batch);
        const std::span<const std::size_t> ends(order.data() + s, e - s);
        LossParts parts;
        double total = 0.0;
        if (!step(ends, adam, rng, parts, total, hist)) continue;
        sum_parts.pred += parts.pred;
        sum_parts.sp += parts.sp;
        sum_parts.ae += parts.ae;
        sum_parts.stc += parts.stc;
        sum_parts.ac += parts.ac;
        sum_total += total;
        ++steps;
      }

      cache = infer_all();
      EpochRecord rec;
      rec.epoch = epoch;
      const double k = steps > 0 ? 1.0 / static_cast<double>(steps) : 0.0;
      rec.parts = {sum_parts.pred * k, sum_parts.sp * k, sum_parts.ae * k,
                   sum_parts.stc * k, sum_parts.ac * k};
      rec.total = sum_total * k;
      rec.val_rmse = val_rmse(cache);
      rec.variogram_fitted = have_variogram_;
      rec.variogram = variogram_;
      rec.selected_count = count_selected(model_.sparse);
      if (rec.val_rmse < best) {
        best = rec.val_rmse;
        best_model = model_;
        hist.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
      rec.best_val_rmse = best;
      hist.epochs.push_back(rec);
      if (since_best >= cfg_.patience) break;
    }
    result.model = hist.epochs.empty() ? model_ : best_model;
    return result;
  }

 private:
  std::vector<InferenceOut> infer_all() const {
    std::vector<InferenceOut> out;
    out.reserve(ends_.size());
    for (std::size_t t : ends_) out.push_back(infer(model_, xf_, t));
    return out;
  }

  double val_rmse(const std::vector<InferenceOut>& cache) const {
    const Normalizer& n = model_.normalizer;
    const std::size_t hw = data_.spec.cell_count();
    double sq = 0.0, count = 0.0;
    for (std::size_t k = 0; k < ends_.size(); ++k) {
      const std::size_t base = ends_[k] * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        if (val_mask_[base + i] == 0.0) continue;
        const double y = cache[k].y[i] * n.label_scale + n.label_mean;
        sq += (y - data_.labels[base + i]) * (y - data_.labels[base + i]);
        count += 1.0;
      }
    }
    return count > 0.0 ? std::sqrt(sq / count) : std::numeric_limits<double>::infinity();
  }

  // Labeled train cells at time t and their normalized labels.
  std::vector<std::size_t> labeled_at(std::size_t t, std::vector<double>& values) const {
    const std::size_t hw = data_.spec.cell_count();
    std::vector<std::size_t> cells;
    values.clear();
    for (std::size_t i : train_flat_) {
      if (train_mask_[t * hw + i] == 0.0) continue;
      cells.push_back(i);
      values.push_back(y_std_[t * hw + i]);
    }
    return cells;
  }

  // Fits the embedding-space variogram on labeled train-cell pairs pooled
  // over every window, each window's lags scaled by its own labeled maximum.
  void refit(const std::vector<InferenceOut>& cache, std::size_t epoch, TrainHistory& hist) {
    std::vector<LagPair> pairs;
    std::vector<double> values;
    Rng unused(0);
    for (std::size_t k = 0; k < ends_.size(); ++k) {
      std::vector<double> v;
      const auto cells = labeled_at(ends_[k], v);
      if (cells.size() < 2) continue;
      const Tensor pts = gather_rows(cache[k].r_t, cells);
      const double denom = max_pairwise_distance(pts);
      if (!(denom > 0.0)) continue;
      const auto offset = static_cast<std::uint32_t>(values.size());
      for (LagPair p : sample_pairs(pts, denom, cfg_.max_points, cfg_.pair_budget, unused)) {
        p.i += offset;
        p.j += offset;
        pairs.push_back(p);
      }
      values.insert(values.end(), v.begin(), v.end());
    }
    ++hist.variogram_fits;
    if (pairs.empty()) return;
    const VariogramBins bins = empirical_semivariogram(pairs, values, cfg_.lag_size);
    FitOptions fo;
    fo.seed = cfg_.seed + epoch;
    try {
      const FitResult fit = fit_gaussian_model(bins, fo);
      variogram_ = fit.model;
      have_variogram_ = true;
      nlohmann::json report = variogram_report(bins, fit, cfg_.min_pairs);
      report["epoch"] = epoch;
      hist.variogram_reports.push_back(std::move(report));
    } catch (const InsufficientBins&) {
    } catch (const FitDiverged&) {
    }
  }

  Var autocorrelation(const Forward& f, std::span<const std::size_t> ends, Rng& rng,
                      TrainHistory& hist) {
    const std::size_t hw = data_.spec.cell_count();
    std::vector<Var> terms;
    for (std::size_t b = 0; b < ends.size(); ++b) {
      std::vector<double> values;
      const auto cells = labeled_at(ends[b], values);
      if (cells.size() < 2) continue;
      const Shape& rs = f.r_t.shape();
      const std::size_t c = rs.back();
      Tensor r_all({hw, c});
      std::copy_n(f.r_t.value().data().begin() + static_cast<std::ptrdiff_t>(b * hw * c),
                  hw * c, r_all.data().begin());
      const Tensor pts = gather_rows(r_all, cells);
      const double denom = max_pairwise_distance(pts);
      if (!(denom > 0.0)) continue;
      const auto label_pairs = sample_pairs(pts, denom, cfg_.max_points, cfg_.pair_budget, rng);
      const auto label_bins = bin_distributions(label_pairs, values, variogram_,
                                                cfg_.lag_size, cfg_.min_pairs);
      const auto pred_pairs = sample_pairs(r_all, denom, cfg_.max_points, cfg_.pair_budget, rng);
      AutocorrelationInputs in;
      in.prediction_pairs = pred_pairs;
      in.label_bins = label_bins;
      in.model = variogram_;
      in.lag_size = cfg_.lag_size;
      in.min_pairs = cfg_.min_pairs;
      Var y_b = reshape(slice(f.y, 0, b, b + 1), {hw});
      terms.push_back(loss_ac(y_b, in).value);
      ++hist.ac_evaluations;
    }
    if (terms.empty()) return Var();
    Var total = terms[0];
    for (std::size_t k = 1; k < terms.size(); ++k) total = add(total, terms[k]);
    return scale(total, 1.0 / static_cast<double>(terms.size()));
  }

  bool step(std::span<const std::size_t> ends, Adam& adam, Rng& rng, LossParts& parts,
            double& total_value, TrainHistory& hist) {
    const std::size_t hw = data_.spec.cell_count();
    const std::size_t b = ends.size();
    const std::size_t h = data_.spec.height, w = data_.spec.width;
    Tensor labels({b, h, w}), mask({b, h, w});
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t i = 0; i < hw; ++i) {
        labels[j * hw + i] = y_std_[ends[j] * hw + i];
        mask[j * hw + i] = train_mask_[ends[j] * hw + i];
      }
    }
    double m = 0.0;
    for (double v : mask.data()) m += v;
    if (m == 0.0) return false;

    Tape tape;
    const ModelVars mv = bind(tape, model_, true);
    const LossWeights& lw = cfg_.weights;
    LossVars lv;
    try {
      Forward f = forward(mv, tape.constant(window_batch(xf_, ends, model_.config.window)));
      lv.pred = loss_pred(f.y, labels, mask);
      lv.sp = loss_sp(mv.sparse);
      lv.ae = loss_ae(f.x_sp, decode(f.e, mv.autoencoder));
      lv.stc = loss_stc(f.r, {model_.config.k_s, model_.config.k_t}, lw.lambda1, lw.lambda2);
      if (lw.eta > 0.0 && have_variogram_) lv.ac = autocorrelation(f, ends, rng, hist);
    } catch (const DomainError& e) {
      throw DivergenceError("forward", e.what());
    }
    parts.pred = lv.pred.value().item();
    parts.sp = lv.sp.value().item();
    parts.ae = lv.ae.value().item();
    parts.stc = lv.stc.value().item();
    parts.ac = lv.ac.valid() ? lv.ac.value().item() : 0.0;
    check_finite(parts.pred, "L_pred");
    check_finite(parts.sp, "L_sp");
    check_finite(parts.ae, "L_ae");
    check_finite(parts.stc, "L_stc");
    check_finite(parts.ac, "L_ac");
    Var total = loss_total(lv, lw);
    total_value = total.value().item();

    const Gradients grads = tape.backward(total);
    auto params = model_.parameters();
    std::vector<Tensor*> ptrs;
    std::vector<Tensor> gs;
    for (std::size_t k = 0; k < params.size(); ++k) {
      ptrs.push_back(params[k].second);
      gs.push_back(grads.wrt(mv.all[k].second));
      if (!gs.back().all_finite()) {
        throw DivergenceError("gradient", "non-finite gradient for " + params[k].first);
      }
    }
    const Tensor before = model_.sparse.weights;
    adam.step(ptrs, gs, cfg_.clip_norm);
    for (const auto& [name, p] : params) {
      if (!p->all_finite()) throw DivergenceError("update", "parameter " + name + " is not finite");
    }
    if (lw.alpha > 0.0) {
      // L1 handling: a sparse weight that reaches or crosses zero is switched
      // off for good (masked, and the L1 subgradient at 0 is 0).
      Tensor& sw = model_.sparse.weights;
      for (std::size_t i = 0; i < sw.size(); ++i) {
        const bool off = before[i] == 0.0 || sw[i] == 0.0 || ((before[i] > 0.0) != (sw[i] > 0.0));
        if (off) {
          sw[i] = 0.0;
          adam.reset_entry(0, i);
        }
      }
    }
    return true;
  }

  Model model_;
  const TrainingSet& data_;
  const LocationSplit& split_;
  TrainConfig cfg_;
  std::vector<std::size_t> ends_;
  std::vector<std::size_t> train_flat_;
  Tensor train_mask_, val_mask_;
  Tensor xf_, y_std_;
  VariogramModel variogram_;
  bool have_variogram_ = false;
};

}  // namespace

std::vector<double> pretrain_autoencoder(Model& model, const Tensor& features,
                                         std::size_t epochs, double lr,
                                         std::uint64_t seed, std::size_t batch_rows) {
  const std::size_t p = model.config.n_features;
  if (features.shape().empty() || features.shape().back() != p) {
    throw ShapeError("pretraining features must end in " + std::to_string(p) + " channels");
  }
  if (!features.all_finite()) throw DomainError("pretraining features are not finite");
  const std::size_t rows = features.size() / p;
  const Tensor x_sp = sparse_forward(features.reshaped({rows, p}), model.sparse);
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  Rng rng(seed);
  Adam adam(lr);
  const std::size_t bs = std::max<std::size_t>(1, batch_rows);

  auto full_mse = [&]() {
    Tape tape;
    AutoencoderVars v = bind_autoencoder(tape, model.autoencoder);
    Var x = tape.constant(x_sp);
    return loss_ae(x, decode(encode(x, v), v)).value().item();
  };

  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < rows; s += bs) {
      const std::size_t e = std::min(rows, s + bs);
      Tensor batch({e - s, p});
      for (std::size_t r = s; r < e; ++r) {
        std::copy_n(x_sp.data().begin() + static_cast<std::ptrdiff_t>(order[r] * p), p,
                    batch.data().begin() + static_cast<std::ptrdiff_t>((r - s) * p));
      }
      Tape tape;
      AutoencoderVars v = bind_autoencoder(tape, model.autoencoder);
      Var x = tape.constant(std::move(batch));
      Var loss = loss_ae(x, decode(encode(x, v), v));
      check_finite(loss.value().item(), "L_ae");
      const Gradients g = tape.backward(loss);
      std::vector<Tensor> gs;
      for (Var pv : autoencoder_vars(v)) gs.push_back(g.wrt(pv));
      adam.step(autoencoder_params(model.autoencoder), gs, 5.0);
    }
    history.push_back(full_mse());
    check_finite(history.back(), "L_ae");
  }
  return history;
}

TrainResult train(Model model, const TrainingSet& data, const LocationSplit& split,
                  const TrainConfig& cfg, bool keep_normalizer) {
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
  Trainer trainer(std::move(model), data, split, cfg, keep_normalizer);
  return trainer.run();
}

TrainResult fine_tune(Model model, const TrainingSet& data, const LocationSplit& split,
                      const std::vector<Cell>& prior_train_cells, const TrainConfig& cfg) {
  const std::set<Cell> prior(prior_train_cells.begin(), prior_train_cells.end());
  for (const auto* cells : {&split.test, &split.val}) {
    for (const Cell& c : *cells) {
      if (prior.count(c)) {
        throw SplitLeakError("cell (" + std::to_string(c.row) + ", " +
                             std::to_string(c.col) +
                             ") was a train cell in an earlier period");
      }
    }
  }
  TrainConfig tuned = cfg;
  tuned.pretrain_epochs = 0;
  Trainer trainer(std::move(model), data, split, tuned, true);
  return trainer.run();
}

Tensor predict_field(const Model& model, const Tensor& features, std::size_t t_begin,
                     std::size_t t_end) {
  if (features.rank() != 4) throw ShapeError("features must be [T, H, W, P]");
  if (t_begin > t_end || t_end > features.dim(0)) {
    throw ConfigError("time range [" + std::to_string(t_begin) + ", " +
                      std::to_string(t_end) + ") outside [0, " +
                      std::to_string(features.dim(0)) + ")");
  }
  const Tensor xf = normalize_features(features, model.normalizer);
  const std::size_t h = features.dim(1), w = features.dim(2);
  Tensor out({t_end - t_begin, h, w});
  for (std::size_t t = t_begin; t < t_end; ++t) {
    const InferenceOut r = infer(model, xf, t);
    for (std::size_t i = 0; i < h * w; ++i) {
      out[(t - t_begin) * h * w + i] =
          r.y[i] * model.normalizer.label_scale + model.normalizer.label_mean;
    }
  }
  return out;
}

Tensor embeddings_at(const Model& model, const Tensor& features, std::size_t t) {
  if (features.rank() != 4 || t >= features.dim(0)) {
    throw ConfigError("time index outside the feature tensor");
  }
  return infer(model, normalize_features(features, model.normalizer), t).r_t;
}

}  // namespace latte
