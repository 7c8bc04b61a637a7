#include "latte/losses.hpp"

#include <cmath>
#include <string>

#include "latte/error.hpp"

namespace latte {

void LossWeights::validate() const {
  for (double w : {alpha, beta, lambda, eta, lambda1, lambda2}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be finite and nonnegative");
    }
  }
}

Var loss_sp(Var sparse_weights) { return sum(abs(sparse_weights)); }

double loss_sp(const SparseLayer& layer) {
  double s = 0.0;
  for (double w : layer.weights.data()) s += std::abs(w);
  return s;
}

Var loss_ae(Var x_sp, Var x_hat) {
  if (x_sp.shape() != x_hat.shape()) {
    throw ShapeError("reconstruction shape " + shape_string(x_hat.shape()) +
                     " differs from input " + shape_string(x_sp.shape()));
  }
  return mean(square(sub(x_sp, x_hat)));
}

namespace {

// Sum of squared differences between R and R shifted by `offset` along the
// given axes, over positions where both ends exist. Returns an invalid Var
// when no pair exists.
Var shifted_sq_sum(Var r, std::span<const std::size_t> axes,
                   std::span<const std::ptrdiff_t> offsets) {
  Var a = r, b = r;
  for (std::size_t k = 0; k < axes.size(); ++k) {
    const std::size_t axis = axes[k];
    const std::ptrdiff_t d = offsets[k];
    const auto n = static_cast<std::ptrdiff_t>(r.shape()[axis]);
    if (std::abs(d) >= n) return Var();
    if (d == 0) continue;
    const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -d));
    const auto hi = static_cast<std::size_t>(n - std::max<std::ptrdiff_t>(0, d));
    a = slice(a, axis, lo, hi);
    const auto shift = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(lo) + d);
    b = slice(b, axis, shift, shift + (hi - lo));
  }
  return sum(square(sub(a, b)));
}

}  // namespace

Var loss_stc(Var embeddings, const NeighborhoodSpec& spec, double lambda1,
             double lambda2) {
  const Shape& s = embeddings.shape();
  if (s.size() < 4) {
    throw ShapeError("loss_stc expects [T, ..., H, W, C], got " + shape_string(s));
  }
  if (spec.k_s < 1 || spec.k_t < 1) throw ConfigError("K_S and K_T must be >= 1");
  const std::size_t rank = s.size();
  const double channels = static_cast<double>(s.back());
  Tape& tape = embeddings.tape();
  std::vector<Var> terms;

  // Each unordered neighbor pair is visited once; the factor 2 counts both
  // ordered directions.
  const std::size_t spatial_axes[] = {rank - 3, rank - 2};
  for (std::size_t k = 1; k <= spec.k_s; ++k) {
    const auto kk = static_cast<std::ptrdiff_t>(k);
    for (std::ptrdiff_t dr = 0; dr <= kk; ++dr) {
      for (std::ptrdiff_t dc = -kk; dc <= kk; ++dc) {
        if (std::max(std::abs(dr), std::abs(dc)) != kk) continue;
        if (dr == 0 && dc < 0) continue;  // mirrored direction
        const std::ptrdiff_t offsets[] = {dr, dc};
        Var t = shifted_sq_sum(embeddings, spatial_axes, offsets);
        if (t.valid()) {
          terms.push_back(scale(t, 2.0 * lambda1 / (static_cast<double>(k) * channels)));
        }
      }
    }
  }
  const std::size_t time_axis[] = {0};
  for (std::size_t k = 1; k <= spec.k_t; ++k) {
    const std::ptrdiff_t offsets[] = {static_cast<std::ptrdiff_t>(k)};
    Var t = shifted_sq_sum(embeddings, time_axis, offsets);
    if (t.valid()) {
      terms.push_back(scale(t, 2.0 * lambda2 / (static_cast<double>(k) * channels)));
    }
  }
  if (terms.empty()) return tape.constant(Tensor::scalar(0.0));
  Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
  return total;
}

Var loss_pred(Var predictions, const Tensor& labels, const Tensor& mask) {
  if (predictions.shape() != labels.shape() || labels.shape() != mask.shape()) {
    throw ShapeError("loss_pred: predictions " +
                     shape_string(predictions.shape()) + ", labels " +
                     shape_string(labels.shape()) + " and mask " +
                     shape_string(mask.shape()) + " must agree");
  }
  double m = 0.0;
  Tensor clean(labels.shape(), 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) {
      m += 1.0;
      clean[i] = labels[i];
    }
  }
  if (m == 0.0) throw EmptyLabelSet("loss_pred: mask selects no labeled cell");
  Tape& tape = predictions.tape();
  Var diff = mul(sub(predictions, tape.constant(std::move(clean))),
                 tape.constant(mask));
  return scale(sum(square(diff)), 1.0 / m);
}

double kl_gaussian(double mu_y, double sigma_y, double mu_hat, double sigma_hat) {
  if (!std::isfinite(mu_y) || !std::isfinite(sigma_y) ||
      !std::isfinite(mu_hat) || !std::isfinite(sigma_hat)) {
    throw DomainError("kl_gaussian: non-finite input");
  }
  if (!(sigma_y > 0.0) || !(sigma_hat > 0.0)) {
    throw DomainError("kl_gaussian: standard deviations must be positive");
  }
  const double vy = sigma_y * sigma_y;
  const double vh = sigma_hat * sigma_hat;
  const double dm = mu_y - mu_hat;
  return 0.5 * (std::log(vh / vy) - 1.0 + (vy + dm * dm) / vh);
}

AutocorrelationValue loss_ac(std::span<const BinPair> bins, double sigma_floor) {
  AutocorrelationValue out;
  const double f2 = sigma_floor * sigma_floor;
  for (const BinPair& b : bins) {
    if (!b.valid()) continue;
    out.value += kl_gaussian(b.label.mu, std::sqrt(b.label.sigma * b.label.sigma + f2),
                             b.prediction.mu,
                             std::sqrt(b.prediction.sigma * b.prediction.sigma + f2));
    ++out.valid_bins;
  }
  return out;
}

AutocorrelationLoss loss_ac(Var predictions, const AutocorrelationInputs& in) {
  const Tensor& yv = predictions.value();
  const std::size_t n = yv.size();
  const std::size_t nb = bin_count(in.lag_size);
  if (in.label_bins.size() != nb) {
    throw ShapeError("label bin statistics do not match the lag binning");
  }
  VariogramBins probe;
  probe.lag_size = in.lag_size;
  probe.counts.assign(nb, 0);

  // Per-bin moments of the prediction-side squared differences.
  std::vector<double> s1(nb, 0.0), s2(nb, 0.0);
  std::vector<std::size_t> count(nb, 0);
  std::vector<std::uint32_t> bin_of(in.prediction_pairs.size());
  for (std::size_t k = 0; k < in.prediction_pairs.size(); ++k) {
    const LagPair& p = in.prediction_pairs[k];
    if (p.i >= n || p.j >= n) throw ShapeError("pair index outside predictions");
    const std::size_t b = probe.bin_of(p.lag);
    bin_of[k] = static_cast<std::uint32_t>(b);
    const double d = yv[p.i] - yv[p.j];
    const double sq = d * d;
    s1[b] += sq;
    s2[b] += sq * sq;
    ++count[b];
  }

  const double f2 = in.sigma_floor * in.sigma_floor;
  double total = 0.0;
  std::size_t valid = 0;
  // dL/dmu_hat and dL/dvar_hat per bin (zero for invalid bins).
  std::vector<double> d_mu(nb, 0.0), d_var(nb, 0.0), mu_hat(nb, 0.0);
  for (std::size_t b = 0; b < nb; ++b) {
    const BinDistribution& lb = in.label_bins[b];
    const bool ok = lb.valid && probe.center(b) <= in.model.range &&
                    count[b] >= in.min_pairs && count[b] > 0;
    if (!ok) continue;
    const double cnt = static_cast<double>(count[b]);
    const double mu = s1[b] / cnt;
    const double var_raw = std::max(0.0, s2[b] / cnt - mu * mu);
    const double vh = var_raw + f2;
    const double vy = lb.sigma * lb.sigma + f2;
    const double dm = lb.mu - mu;
    total += 0.5 * (std::log(vh / vy) - 1.0 + (vy + dm * dm) / vh);
    ++valid;
    mu_hat[b] = mu;
    d_mu[b] = -dm / vh;
    d_var[b] = 0.5 * (1.0 / vh - (vy + dm * dm) / (vh * vh));
  }

  std::vector<LagPair> pairs(in.prediction_pairs.begin(), in.prediction_pairs.end());
  const Var parents[] = {predictions};
  Var value = predictions.tape().record(
      Tensor::scalar(total), parents,
      [predictions, pairs = std::move(pairs), bin_of = std::move(bin_of),
       count, d_mu, d_var, mu_hat](Tape& t, const Tensor& g) {
        Tensor* gy = t.grad_buffer(predictions);
        if (!gy) return;
        const Tensor& yv = predictions.value();
        auto dst = gy->data();
        const double scale = g[0];
        for (std::size_t k = 0; k < pairs.size(); ++k) {
          const std::size_t b = bin_of[k];
          if (d_mu[b] == 0.0 && d_var[b] == 0.0) continue;
          const LagPair& p = pairs[k];
          const double cnt = static_cast<double>(count[b]);
          const double d = yv[p.i] - yv[p.j];
          const double sq = d * d;
          // d mu / d sq = 1/n ; d var / d sq = 2 (sq - mu) / n
          const double d_sq = (d_mu[b] + d_var[b] * 2.0 * (sq - mu_hat[b])) / cnt;
          const double gd = scale * d_sq * 2.0 * d;
          dst[p.i] += gd;
          dst[p.j] -= gd;
        }
      },
      "loss_ac");
  return {value, valid};
}

namespace {

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) {
    throw DomainError(std::string("loss term ") + term + " is not finite");
  }
}

}  // namespace

double loss_total(const LossParts& p, const LossWeights& w) {
  require_finite(p.pred, "L_pred");
  require_finite(p.sp, "L_sp");
  require_finite(p.ae, "L_ae");
  require_finite(p.stc, "L_stc");
  require_finite(p.ac, "L_ac");
  return p.pred + w.alpha * p.sp + w.beta * p.ae + w.lambda * p.stc +
         w.eta * p.ac;
}

Var loss_total(const LossVars& p, const LossWeights& w) {
  require_finite(p.pred.value().item(), "L_pred");
  Var total = p.pred;
  auto term = [&](Var v, double weight, const char* name) {
    if (!v.valid()) return;
    require_finite(v.value().item(), name);
    if (weight != 0.0) total = add(total, scale(v, weight));
  };
  term(p.sp, w.alpha, "L_sp");
  term(p.ae, w.beta, "L_ae");
  term(p.stc, w.lambda, "L_stc");
  term(p.ac, w.eta, "L_ac");
  return total;
}

}  // namespace latte
