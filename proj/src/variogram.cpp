#include "latte/variogram.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "latte/error.hpp"

namespace latte {

namespace {

void check_points(const Tensor& points) {
  if (points.rank() != 2) {
    throw ShapeError("points must be [n, d], got " + shape_string(points.shape()));
  }
  if (points.dim(0) < 2) {
    throw ShapeError("at least 2 points are required for pairwise lags");
  }
}

double distance(const Tensor& points, std::size_t i, std::size_t j) {
  const std::size_t d = points.dim(1);
  const double* a = points.data().data() + i * d;
  const double* b = points.data().data() + j * d;
  double acc = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    const double diff = a[k] - b[k];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace

double max_pairwise_distance(const Tensor& points) {
  check_points(points);
  const std::size_t n = points.dim(0);
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      best = std::max(best, distance(points, i, j));
    }
  }
  return best;
}

Tensor pairwise_lags(const Tensor& points) {
  check_points(points);
  const std::size_t n = points.dim(0);
  Tensor lags(Shape{n, n}, 0.0);
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = distance(points, i, j);
      lags[i * n + j] = d;
      lags[j * n + i] = d;
      best = std::max(best, d);
    }
  }
  if (!(best > 0.0)) {
    throw DegenerateEmbeddings("all points coincide; lags are undefined");
  }
  for (double& v : lags.data()) v /= best;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      // Pin the maximum to exactly 1 regardless of rounding in the division.
      if (lags[i * n + j] > 1.0) lags[i * n + j] = lags[j * n + i] = 1.0;
    }
  }
  return lags;
}

std::vector<LagPair> pairs_from_lags(const Tensor& lags) {
  const std::size_t n = lags.dim(0);
  std::vector<LagPair> pairs;
  pairs.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      pairs.push_back({static_cast<std::uint32_t>(i),
                       static_cast<std::uint32_t>(j), lags[i * n + j]});
    }
  }
  return pairs;
}

std::vector<LagPair> sample_pairs(const Tensor& points, double denominator,
                                  std::size_t max_points,
                                  std::size_t pair_budget, Rng& rng) {
  check_points(points);
  if (!(denominator > 0.0)) {
    throw DegenerateEmbeddings("lag denominator must be positive");
  }
  const std::size_t n = points.dim(0);
  std::vector<LagPair> pairs;
  auto make = [&](std::size_t i, std::size_t j) {
    const double lag = std::min(1.0, distance(points, i, j) / denominator);
    return LagPair{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                   lag};
  };
  if (n <= max_points) {
    pairs.reserve(n * (n - 1));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        LagPair p = make(i, j);
        pairs.push_back(p);
        pairs.push_back({p.j, p.i, p.lag});
      }
    }
    return pairs;
  }
  pairs.reserve(pair_budget);
  for (std::size_t k = 0; k < pair_budget; ++k) {
    const auto i = static_cast<std::size_t>(rng.below(n));
    auto j = static_cast<std::size_t>(rng.below(n - 1));
    if (j >= i) ++j;
    pairs.push_back(make(i, j));
  }
  return pairs;
}

std::size_t bin_count(double lag_size, double max_lag) {
  if (!(lag_size > 0.0) || !(lag_size <= max_lag)) {
    throw DomainError("lag_size must lie in (0, max_lag]");
  }
  return static_cast<std::size_t>(std::ceil(max_lag / lag_size - 1e-9));
}

std::size_t VariogramBins::populated_count() const {
  return static_cast<std::size_t>(
      std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
}

std::size_t VariogramBins::bin_of(double lag) const {
  const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(lag / lag_size)));
  return std::min(b, counts.size() - 1);
}

VariogramBins empirical_semivariogram(std::span<const LagPair> pairs,
                                      std::span<const double> values,
                                      double lag_size, double max_lag) {
  VariogramBins bins;
  bins.lag_size = lag_size;
  bins.max_lag = max_lag;
  const std::size_t nb = bin_count(lag_size, max_lag);
  bins.counts.assign(nb, 0);
  bins.gamma.assign(nb, 0.0);
  for (const LagPair& p : pairs) {
    if (p.i >= values.size() || p.j >= values.size()) {
      throw ShapeError("pair index outside the value vector");
    }
    const std::size_t b = bins.bin_of(p.lag);
    const double d = values[p.i] - values[p.j];
    bins.gamma[b] += d * d;
    ++bins.counts[b];
  }
  for (std::size_t b = 0; b < nb; ++b) {
    if (bins.counts[b] > 0) bins.gamma[b] /= static_cast<double>(bins.counts[b]);
  }
  return bins;
}

VariogramBins empirical_semivariogram(const Tensor& lags,
                                      std::span<const double> values,
                                      double lag_size) {
  if (lags.rank() != 2 || lags.dim(0) != lags.dim(1) ||
      lags.dim(0) != values.size()) {
    throw ShapeError("lags must be [n, n] with n values");
  }
  const auto pairs = pairs_from_lags(lags);
  return empirical_semivariogram(pairs, values, lag_size, 1.0);
}

double VariogramModel::operator()(double h) const {
  const double q = h / (range / 2.0);
  return nugget + sill * (1.0 - std::exp(-q * q));
}

namespace {

struct Sample {
  double h, gamma, weight;
};

struct LmOutcome {
  Eigen::Vector3d theta;  // (nugget, sill, range)
  double cost;
  bool converged;
};

double weighted_cost(const std::vector<Sample>& samples,
                     const Eigen::Vector3d& theta) {
  const VariogramModel m{theta[0], theta[1], theta[2]};
  double c = 0.0;
  for (const Sample& s : samples) {
    const double r = m(s.h) - s.gamma;
    c += s.weight * r * r;
  }
  return c;
}

LmOutcome run_lm(const std::vector<Sample>& samples, Eigen::Vector3d theta,
                 const FitOptions& opt) {
  const int np = opt.fix_nugget_zero ? 2 : 3;
  const int offset = opt.fix_nugget_zero ? 1 : 0;
  auto project = [&](Eigen::Vector3d& t) {
    if (opt.fix_nugget_zero) t[0] = 0.0;
    t[0] = std::max(0.0, t[0]);
    t[1] = std::max(1e-12, t[1]);
    t[2] = std::clamp(t[2], opt.range_lower, opt.range_upper);
  };
  project(theta);
  double cost = weighted_cost(samples, theta);
  double damping = 1e-3;
  bool converged = false;
  const std::size_t m = samples.size();
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(m), np);
  Eigen::VectorXd res(static_cast<Eigen::Index>(m));

  for (std::size_t iter = 0; iter < opt.max_iterations; ++iter) {
    const double n = theta[0], s = theta[1], r = theta[2];
    for (std::size_t k = 0; k < m; ++k) {
      const Sample& smp = samples[k];
      const double sw = std::sqrt(smp.weight);
      const double e = std::exp(-4.0 * smp.h * smp.h / (r * r));
      const auto row = static_cast<Eigen::Index>(k);
      res[row] = sw * (n + s * (1.0 - e) - smp.gamma);
      const double d_dn = 1.0;
      const double d_ds = 1.0 - e;
      const double d_dr = -s * e * 8.0 * smp.h * smp.h / (r * r * r);
      if (!opt.fix_nugget_zero) jac(row, 0) = sw * d_dn;
      jac(row, 1 - offset) = sw * d_ds;
      jac(row, 2 - offset) = sw * d_dr;
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd grad = jac.transpose() * res;
    // Active set: parameters on a bound whose gradient points outward stay
    // fixed; the step is solved over the remaining ones.
    std::vector<int> free;
    for (int d = 0; d < np; ++d) {
      const int k = d + offset;
      const double lo = k == 0 ? 0.0 : (k == 1 ? 1e-12 : opt.range_lower);
      const double hi = k == 2 ? opt.range_upper : std::numeric_limits<double>::infinity();
      const bool at_lo = theta[k] <= lo && grad[d] > 0.0;
      const bool at_hi = theta[k] >= hi && grad[d] < 0.0;
      if (!at_lo && !at_hi) free.push_back(d);
    }
    double pg = 0.0;
    for (int d : free) pg = std::max(pg, std::abs(grad[d]));
    if (free.empty() || pg <= 1e-14 * std::max(1.0, cost)) {
      converged = true;
      break;
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd jf(nf, nf);
    Eigen::VectorXd gf(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      gf[a] = grad[free[a]];
      for (Eigen::Index b = 0; b < nf; ++b) jf(a, b) = jtj(free[a], free[b]);
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      Eigen::MatrixXd a = jf;
      for (Eigen::Index d = 0; d < nf; ++d) a(d, d) += damping * std::max(jf(d, d), 1e-12);
      const Eigen::VectorXd step = a.ldlt().solve(-gf);
      Eigen::Vector3d cand = theta;
      for (Eigen::Index d = 0; d < nf; ++d) cand[free[d] + offset] += step[d];
      project(cand);
      const double c = weighted_cost(samples, cand);
      if (std::isfinite(c) && c <= cost) {
        const double change = (cand - theta).norm();
        const double rel = cost > 0.0 ? (cost - c) / cost : 0.0;
        theta = cand;
        cost = c;
        damping = std::max(damping * 0.3, 1e-12);
        improved = true;
        if (change <= 1e-10 * (1.0 + theta.norm()) || rel < 1e-12 || c == 0.0) {
          converged = true;
        }
        break;
      }
      damping *= 10.0;
    }
    if (!improved) {
      // No descent direction left inside the box: a constrained stationary
      // point.
      converged = true;
    }
    if (converged) break;
  }
  return {theta, cost, converged};
}

}  // namespace

FitResult fit_gaussian_model(const VariogramBins& bins, const FitOptions& opt) {
  if (!(opt.range_lower > 0.0) || !(opt.range_upper > opt.range_lower)) {
    throw DomainError("invalid range bounds for the variogram fit");
  }
  std::vector<Sample> samples;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    if (bins.populated(b)) {
      samples.push_back({bins.center(b), bins.gamma[b],
                         static_cast<double>(bins.counts[b])});
    }
  }
  const std::size_t needed = opt.fix_nugget_zero ? 2 : 3;
  if (samples.size() < needed) {
    throw InsufficientBins("variogram fit needs at least " +
                           std::to_string(needed) + " populated bins, got " +
                           std::to_string(samples.size()));
  }
  double gmax = 0.0, gmin = std::numeric_limits<double>::infinity();
  for (const Sample& s : samples) {
    gmax = std::max(gmax, s.gamma);
    gmin = std::min(gmin, s.gamma);
  }
  const double sill0 = std::max(gmax, 1e-12);
  const double nugget0 = opt.fix_nugget_zero ? 0.0 : 0.5 * gmin;

  std::vector<double> starts{0.2 * opt.range_upper, 0.5 * opt.range_upper,
                             0.8 * opt.range_upper};
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < opt.random_starts; ++k) {
    starts.push_back(rng.uniform(opt.range_lower, opt.range_upper));
  }

  bool have = false;
  LmOutcome best{};
  for (double r0 : starts) {
    const LmOutcome out =
        run_lm(samples, Eigen::Vector3d(nugget0, sill0 - nugget0, r0), opt);
    if (!std::isfinite(out.cost) || !out.theta.allFinite()) continue;
    if (!have || out.cost < best.cost ||
        (out.cost == best.cost && out.converged && !best.converged)) {
      best = out;
      have = true;
    }
  }
  if (!have) {
    throw FitDiverged("variogram fit produced no finite solution",
                      std::numeric_limits<double>::infinity());
  }
  if (!best.converged) {
    throw FitDiverged("variogram fit did not converge", best.cost);
  }
  // Plateau: when the smallest admissible range fits as well, the data show
  // no autocorrelation at the binned lags and the range is pinned there.
  Eigen::Vector3d pinned = best.theta;
  pinned[2] = opt.range_lower;
  const double pinned_cost = weighted_cost(samples, pinned);
  if (pinned_cost <= best.cost * (1.0 + 1e-9) + 1e-300) {
    best.theta = pinned;
    best.cost = std::min(best.cost, pinned_cost);
  }
  FitResult result;
  result.model = VariogramModel{best.theta[0], best.theta[1], best.theta[2]};
  result.residual = best.cost;
  result.converged = true;
  result.range_at_lower_bound = best.theta[2] <= opt.range_lower * (1.0 + 1e-9);
  return result;
}

std::vector<BinDistribution> bin_distributions(std::span<const LagPair> pairs,
                                               std::span<const double> values,
                                               const VariogramModel& model,
                                               double lag_size,
                                               std::size_t min_pairs,
                                               double max_lag) {
  const std::size_t nb = bin_count(lag_size, max_lag);
  std::vector<double> s1(nb, 0.0), s2(nb, 0.0);
  std::vector<std::size_t> count(nb, 0);
  VariogramBins probe;
  probe.lag_size = lag_size;
  probe.max_lag = max_lag;
  probe.counts.assign(nb, 0);
  for (const LagPair& p : pairs) {
    const std::size_t b = probe.bin_of(p.lag);
    const double d = values[p.i] - values[p.j];
    const double sq = d * d;
    s1[b] += sq;
    s2[b] += sq * sq;
    ++count[b];
  }
  std::vector<BinDistribution> out(nb);
  for (std::size_t b = 0; b < nb; ++b) {
    BinDistribution& bd = out[b];
    bd.bin = b;
    bd.count = count[b];
    if (count[b] > 0) {
      const double n = static_cast<double>(count[b]);
      bd.mu = s1[b] / n;
      bd.sigma = std::sqrt(std::max(0.0, s2[b] / n - bd.mu * bd.mu));
    }
    bd.valid = probe.center(b) <= model.range && count[b] >= min_pairs;
  }
  return out;
}

std::vector<BinDistribution> bin_distributions(const Tensor& lags,
                                               std::span<const double> values,
                                               const VariogramModel& model,
                                               double lag_size,
                                               std::size_t min_pairs) {
  if (lags.rank() != 2 || lags.dim(0) != values.size()) {
    throw ShapeError("lags must be [n, n] with n values");
  }
  const auto pairs = pairs_from_lags(lags);
  return bin_distributions(pairs, values, model, lag_size, min_pairs, 1.0);
}

nlohmann::json variogram_report(const VariogramBins& bins, const FitResult& fit,
                                std::size_t min_pairs) {
  nlohmann::json jb = nlohmann::json::array();
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const double c = bins.center(b);
    jb.push_back({{"center", c},
                  {"count", bins.counts[b]},
                  {"gamma", bins.populated(b) ? nlohmann::json(bins.gamma[b])
                                              : nlohmann::json(nullptr)},
                  {"fitted", fit.model(c)},
                  {"valid", c <= fit.model.range && bins.counts[b] >= min_pairs}});
  }
  return {{"lag_size", bins.lag_size},
          {"max_lag", bins.max_lag},
          {"bins", jb},
          {"fitted", {{"nugget", fit.model.nugget},
                      {"sill", fit.model.sill},
                      {"range", fit.model.range}}},
          {"residual", fit.residual},
          {"range_at_lower_bound", fit.range_at_lower_bound}};
}

}  // namespace latte
