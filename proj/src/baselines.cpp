#include "latte/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "latte/error.hpp"

namespace latte {

namespace {

constexpr double kCoincident = 1e-9;

double dist(double ax, double ay, double bx, double by) {
  return std::hypot(ax - bx, ay - by);
}

void check_observations(const ObservationSet& obs) {
  if (obs.empty()) throw EmptyLabelSet("no observations to interpolate from");
  for (const Observation& o : obs) {
    if (!std::isfinite(o.easting) || !std::isfinite(o.northing) ||
        !std::isfinite(o.value)) {
      throw DomainError("observation is not finite");
    }
  }
}

// Merges observations closer than kCoincident into their mean.
ObservationSet merge_duplicates(const ObservationSet& obs) {
  ObservationSet out;
  std::vector<double> counts;
  for (const Observation& o : obs) {
    bool merged = false;
    for (std::size_t k = 0; k < out.size(); ++k) {
      if (dist(o.easting, o.northing, out[k].easting, out[k].northing) <
          kCoincident) {
        out[k].value += o.value;
        counts[k] += 1.0;
        merged = true;
        break;
      }
    }
    if (!merged) {
      out.push_back(o);
      counts.push_back(1.0);
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].value /= counts[k];
  return out;
}

}  // namespace

std::vector<double> idw_predict(const ObservationSet& obs,
                                std::span<const Coordinate> targets,
                                double power) {
  check_observations(obs);
  std::vector<double> out;
  out.reserve(targets.size());
  // Centered on the first value so that a constant field (and in particular a
  // single observation) is reproduced exactly.
  const double y0 = obs.front().value;
  for (const auto& [x, y] : targets) {
    double num = 0.0, den = 0.0;
    bool exact = false;
    for (const Observation& o : obs) {
      const double d = dist(x, y, o.easting, o.northing);
      if (d < kCoincident) {
        out.push_back(o.value);
        exact = true;
        break;
      }
      const double w = std::pow(d, -power);
      num += w * (o.value - y0);
      den += w;
    }
    if (!exact) out.push_back(y0 + num / den);
  }
  return out;
}

OrdinaryKriging OrdinaryKriging::fit(const ObservationSet& obs,
                                     const KrigingOptions& options) {
  check_observations(obs);
  OrdinaryKriging ok;
  ok.points_ = merge_duplicates(obs);
  const std::size_t n = ok.points_.size();
  const auto& pts = ok.points_;

  double max_d = 0.0;
  std::vector<LagPair> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = dist(pts[i].easting, pts[i].northing, pts[j].easting,
                            pts[j].northing);
      max_d = std::max(max_d, d);
      pairs.push_back({static_cast<std::uint32_t>(i),
                       static_cast<std::uint32_t>(j), d});
    }
  }
  if (n == 1) {
    ok.model_ = VariogramModel{0.0, 1.0, 1.0};
  } else {
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = pts[i].value;
    const VariogramBins bins = empirical_semivariogram(
        pairs, values, max_d / static_cast<double>(options.n_bins), max_d);
    FitOptions fo;
    fo.fix_nugget_zero = true;
    fo.range_lower = 1e-3 * max_d;
    fo.range_upper = max_d;
    fo.seed = options.seed;
    // Fewer than two distinct lag bins (e.g. two observations): any increasing
    // variogram gives the same weights up to scale, so fall back to sill =
    // mean semivariance and range = largest distance.
    auto fallback = [&] {
      double g = 0.0, c = 0.0;
      for (std::size_t b = 0; b < bins.size(); ++b) {
        g += bins.gamma[b] * static_cast<double>(bins.counts[b]);
        c += static_cast<double>(bins.counts[b]);
      }
      return VariogramModel{0.0, std::max(g / c, 1e-12), max_d};
    };
    try {
      ok.model_ = fit_gaussian_model(bins, fo).model;
    } catch (const InsufficientBins&) {
      ok.model_ = fallback();
    }
  }

  // Kriging matrix of size (n+1)^2, factorized in place.
  const std::size_t m = n + 1;
  std::vector<double> a(m * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      a[i * m + j] = i == j ? 0.0
                            : ok.model_(dist(pts[i].easting, pts[i].northing,
                                             pts[j].easting, pts[j].northing));
    }
    a[i * m + n] = 1.0;
    a[n * m + i] = 1.0;
  }
  double scale = 0.0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  ok.pivots_.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t piv = k;
    for (std::size_t r = k + 1; r < m; ++r) {
      if (std::abs(a[r * m + k]) > std::abs(a[piv * m + k])) piv = r;
    }
    if (std::abs(a[piv * m + k]) <= scale * std::numeric_limits<double>::epsilon() * 1e-3) {
      throw SingularKrigingSystem("kriging system is singular");
    }
    ok.pivots_[k] = piv;
    if (piv != k) {
      for (std::size_t c = 0; c < m; ++c) std::swap(a[k * m + c], a[piv * m + c]);
    }
    const double inv = 1.0 / a[k * m + k];
    for (std::size_t r = k + 1; r < m; ++r) {
      const double f = a[r * m + k] * inv;
      a[r * m + k] = f;
      if (f == 0.0) continue;
      for (std::size_t c = k + 1; c < m; ++c) a[r * m + c] -= f * a[k * m + c];
    }
  }
  ok.lu_ = std::move(a);
  return ok;
}

OrdinaryKriging::Solution OrdinaryKriging::solve(Coordinate target) const {
  const std::size_t n = points_.size();
  const std::size_t m = n + 1;
  std::vector<double> b(m);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = dist(target.first, target.second, points_[i].easting,
                          points_[i].northing);
    b[i] = d == 0.0 ? 0.0 : model_(d);
  }
  b[n] = 1.0;
  for (std::size_t k = 0; k < m; ++k) {
    if (pivots_[k] != k) std::swap(b[k], b[pivots_[k]]);
  }
  for (std::size_t r = 1; r < m; ++r) {
    double s = b[r];
    for (std::size_t c = 0; c < r; ++c) s -= lu_[r * m + c] * b[c];
    b[r] = s;
  }
  for (std::size_t r = m; r-- > 0;) {
    double s = b[r];
    for (std::size_t c = r + 1; c < m; ++c) s -= lu_[r * m + c] * b[c];
    b[r] = s / lu_[r * m + r];
  }
  Solution sol;
  sol.weights.assign(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(n));
  sol.multiplier = b[n];
  return sol;
}

double OrdinaryKriging::predict(Coordinate target) const {
  const Solution sol = solve(target);
  double y = 0.0;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    y += sol.weights[i] * points_[i].value;
  }
  return y;
}

std::vector<double> OrdinaryKriging::predict(
    std::span<const Coordinate> targets) const {
  std::vector<double> out;
  out.reserve(targets.size());
  for (const Coordinate& t : targets) out.push_back(predict(t));
  return out;
}

std::vector<double> ok_predict(const ObservationSet& obs,
                               std::span<const Coordinate> targets,
                               const KrigingOptions& options) {
  return OrdinaryKriging::fit(obs, options).predict(targets);
}

Tensor interpolate_field(const LabelGrid& labels, const GridSpec& spec,
                         const std::vector<Cell>& cells, BaselineMethod method,
                         std::size_t t_begin, std::size_t t_end) {
  if (t_begin > t_end || t_end > labels.time_steps()) {
    throw GridError("time range outside the label grid");
  }
  const std::size_t h = spec.height, w = spec.width;
  std::vector<Coordinate> targets;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) targets.push_back(spec.cell_center({r, c}));
  }
  Tensor out({t_end - t_begin, h, w});
  for (std::size_t t = t_begin; t < t_end; ++t) {
    ObservationSet obs;
    for (const Cell& cell : cells) {
      if (!labels.observed(t, cell)) continue;
      const auto [e, n] = spec.cell_center(cell);
      obs.push_back({e, n, labels.value(t, cell)});
    }
    const std::vector<double> pred = method == BaselineMethod::kIdw
                                         ? idw_predict(obs, targets)
                                         : ok_predict(obs, targets);
    std::copy(pred.begin(), pred.end(),
              out.data().begin() + static_cast<std::ptrdiff_t>((t - t_begin) * h * w));
  }
  return out;
}

}  // namespace latte
