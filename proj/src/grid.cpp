#include "latte/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "latte/error.hpp"
#include "latte/rng.hpp"

namespace latte {

void GridSpec::validate() const {
  if (height < 1 || width < 1) throw GridError("grid must have H >= 1, W >= 1");
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw GridError("cell_size must be positive");
  }
  if (!std::isfinite(origin_easting) || !std::isfinite(origin_northing)) {
    throw GridError("grid origin must be finite");
  }
}

std::optional<Cell> GridSpec::cell_of(double easting, double northing) const {
  const double fx = (easting - origin_easting) / cell_size;
  const double fy = (northing - origin_northing) / cell_size;
  if (!(fx >= 0.0) || !(fy >= 0.0)) return std::nullopt;
  const auto c = static_cast<std::size_t>(std::floor(fx));
  const auto r = static_cast<std::size_t>(std::floor(fy));
  if (c >= width || r >= height) return std::nullopt;
  return Cell{r, c};
}

std::pair<double, double> GridSpec::cell_center(Cell cell) const {
  return {origin_easting + (static_cast<double>(cell.col) + 0.5) * cell_size,
          origin_northing + (static_cast<double>(cell.row) + 0.5) * cell_size};
}

void FeatureGrid::validate() const {
  spec.validate();
  const Shape& ds = dynamic.shape();
  const Shape& ss = statics.shape();
  if (ds.size() != 4 || ds[0] != time_steps || ds[1] != spec.height ||
      ds[2] != spec.width) {
    throw ShapeError("dynamic features must be [time, H, W, P_d], got " +
                     shape_string(ds));
  }
  if (ss.size() != 3 || ss[0] != spec.height || ss[1] != spec.width) {
    throw ShapeError("static features must be [H, W, P_s], got " +
                     shape_string(ss));
  }
  if (feature_names.size() != ds[3] + ss[2] || feature_names.empty()) {
    throw ShapeError("feature_names must list P = P_d + P_s >= 1 names");
  }
  std::set<std::string> unique(feature_names.begin(), feature_names.end());
  if (unique.size() != feature_names.size()) {
    throw GridError("feature names must be unique");
  }
  if (!dynamic.all_finite() || !statics.all_finite()) {
    throw DomainError("feature grid contains non-finite values");
  }
}

Tensor FeatureGrid::frame(std::size_t t) const {
  const std::size_t h = spec.height, w = spec.width;
  const std::size_t pd = dynamic_count(), ps = static_count();
  Tensor out(Shape{h, w, pd + ps});
  auto dst = out.data();
  auto dyn = dynamic.data();
  auto sta = statics.data();
  for (std::size_t i = 0; i < h * w; ++i) {
    std::copy_n(dyn.data() + (t * h * w + i) * pd, pd,
                dst.data() + i * (pd + ps));
    std::copy_n(sta.data() + i * ps, ps, dst.data() + i * (pd + ps) + pd);
  }
  return out;
}

LabelGrid LabelGrid::empty(std::size_t time_steps, const GridSpec& spec) {
  const Shape s{time_steps, spec.height, spec.width};
  return LabelGrid{Tensor(s, 0.0), Tensor(s, 0.0)};
}

bool LabelGrid::observed(std::size_t t, Cell cell) const {
  return mask.at({t, cell.row, cell.col}) != 0.0;
}

double LabelGrid::value(std::size_t t, Cell cell) const {
  return values.at({t, cell.row, cell.col});
}

std::size_t LabelGrid::observed_count(std::size_t t) const {
  const std::size_t per = mask.size() / time_steps();
  auto m = mask.data();
  return static_cast<std::size_t>(
      std::count_if(m.begin() + static_cast<std::ptrdiff_t>(t * per),
                    m.begin() + static_cast<std::ptrdiff_t>((t + 1) * per),
                    [](double v) { return v != 0.0; }));
}

std::vector<Cell> LabelGrid::labeled_cells() const {
  const std::size_t tt = values.dim(0), h = values.dim(1), w = values.dim(2);
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t t = 0; t < tt; ++t) {
        if (mask[(t * h + r) * w + c] != 0.0) {
          cells.push_back({r, c});
          break;
        }
      }
    }
  }
  return cells;
}

void LabelGrid::validate() const {
  if (values.rank() != 3 || mask.shape() != values.shape()) {
    throw ShapeError("labels and mask must both be [time, H, W]");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (mask[i] != 0.0 && !std::isfinite(values[i])) {
      throw DomainError("observed label is not finite");
    }
  }
}

void GeoPrimitive::validate() const {
  for (const auto& [x, y] : coords) {
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw GridError("primitive coordinates must be finite");
    }
  }
  switch (kind) {
    case PrimitiveKind::kPoint:
      if (coords.size() != 1) throw GridError("point needs exactly 1 vertex");
      break;
    case PrimitiveKind::kPolyline:
      if (coords.size() < 2) throw GridError("polyline needs >= 2 vertices");
      break;
    case PrimitiveKind::kPolygon: {
      std::size_t n = coords.size();
      if (n >= 2 && coords.front() == coords.back()) --n;
      if (n < 3) throw GridError("polygon needs >= 3 vertices");
      break;
    }
  }
}

namespace {

using Point = std::pair<double, double>;

struct Rect {
  double x0, y0, x1, y1;
};

Rect cell_rect(const GridSpec& spec, std::size_t r, std::size_t c) {
  const double x0 = spec.origin_easting + static_cast<double>(c) * spec.cell_size;
  const double y0 = spec.origin_northing + static_cast<double>(r) * spec.cell_size;
  return {x0, y0, x0 + spec.cell_size, y0 + spec.cell_size};
}

// Liang-Barsky clip; returns the clipped length of segment a-b inside rect.
double clipped_length(Point a, Point b, const Rect& rect) {
  const double dx = b.first - a.first;
  const double dy = b.second - a.second;
  double t0 = 0.0, t1 = 1.0;
  const std::array<double, 4> p{-dx, dx, -dy, dy};
  const std::array<double, 4> q{a.first - rect.x0, rect.x1 - a.first,
                                a.second - rect.y0, rect.y1 - a.second};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return 0.0;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) {
      t0 = std::max(t0, t);
    } else {
      t1 = std::min(t1, t);
    }
    if (t0 > t1) return 0.0;
  }
  return (t1 - t0) * std::hypot(dx, dy);
}

// Sutherland-Hodgman clip of a ring against one half-plane.
template <typename Inside, typename Intersect>
std::vector<Point> clip_edge(const std::vector<Point>& ring, Inside inside,
                             Intersect intersect) {
  std::vector<Point> out;
  if (ring.empty()) return out;
  Point prev = ring.back();
  bool prev_in = inside(prev);
  for (const Point& cur : ring) {
    const bool cur_in = inside(cur);
    if (cur_in) {
      if (!prev_in) out.push_back(intersect(prev, cur));
      out.push_back(cur);
    } else if (prev_in) {
      out.push_back(intersect(prev, cur));
    }
    prev = cur;
    prev_in = cur_in;
  }
  return out;
}

double ring_area(const std::vector<Point>& ring) {
  double twice = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point& p = ring[i];
    const Point& q = ring[(i + 1) % ring.size()];
    twice += p.first * q.second - q.first * p.second;
  }
  return std::abs(twice) * 0.5;
}

double clipped_area(const std::vector<Point>& ring, const Rect& r) {
  auto lerp_x = [](Point a, Point b, double x) {
    const double t = (x - a.first) / (b.first - a.first);
    return Point{x, a.second + t * (b.second - a.second)};
  };
  auto lerp_y = [](Point a, Point b, double y) {
    const double t = (y - a.second) / (b.second - a.second);
    return Point{a.first + t * (b.first - a.first), y};
  };
  auto poly = clip_edge(
      ring, [&](Point p) { return p.first >= r.x0; },
      [&](Point a, Point b) { return lerp_x(a, b, r.x0); });
  poly = clip_edge(
      poly, [&](Point p) { return p.first <= r.x1; },
      [&](Point a, Point b) { return lerp_x(a, b, r.x1); });
  poly = clip_edge(
      poly, [&](Point p) { return p.second >= r.y0; },
      [&](Point a, Point b) { return lerp_y(a, b, r.y0); });
  poly = clip_edge(
      poly, [&](Point p) { return p.second <= r.y1; },
      [&](Point a, Point b) { return lerp_y(a, b, r.y1); });
  return poly.size() < 3 ? 0.0 : ring_area(poly);
}

struct IndexRange {
  std::size_t r0, r1, c0, c1;  // inclusive
  bool empty = false;
};

IndexRange cells_overlapping(const std::vector<Point>& pts,
                             const GridSpec& spec) {
  double xmin = pts[0].first, xmax = xmin, ymin = pts[0].second, ymax = ymin;
  for (const auto& [x, y] : pts) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  IndexRange out{};
  if (xmax < spec.origin_easting || ymax < spec.origin_northing ||
      xmin > spec.max_easting() || ymin > spec.max_northing()) {
    out.empty = true;
    return out;
  }
  auto to_index = [&](double v, double origin, std::size_t n) {
    const double f = std::floor((v - origin) / spec.cell_size);
    return static_cast<std::size_t>(
        std::clamp(f, 0.0, static_cast<double>(n - 1)));
  };
  out.c0 = to_index(xmin, spec.origin_easting, spec.width);
  out.c1 = to_index(xmax, spec.origin_easting, spec.width);
  out.r0 = to_index(ymin, spec.origin_northing, spec.height);
  out.r1 = to_index(ymax, spec.origin_northing, spec.height);
  return out;
}

bool compatible(PrimitiveKind kind, Aggregator agg) {
  switch (agg) {
    case Aggregator::kSumLength: return kind == PrimitiveKind::kPolyline;
    case Aggregator::kSumArea: return kind == PrimitiveKind::kPolygon;
    case Aggregator::kCount:
    case Aggregator::kMeanAttribute: return true;
  }
  return false;
}

}  // namespace

Tensor rasterize_features(const std::vector<GeoPrimitive>& primitives,
                          const GridSpec& spec, Aggregator aggregator) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  Tensor out(Shape{h, w}, 0.0);
  std::vector<double> hits(h * w, 0.0);

  for (const GeoPrimitive& prim : primitives) {
    prim.validate();
    if (!compatible(prim.kind, aggregator)) {
      throw InvalidAggregator("aggregator is not compatible with primitive kind");
    }
    // Per-cell measure of this primitive: length, area, or 1 for a point.
    std::map<std::size_t, double> measure;
    if (prim.kind == PrimitiveKind::kPoint) {
      if (auto cell = spec.cell_of(prim.coords[0].first, prim.coords[0].second)) {
        measure[cell->row * w + cell->col] = 1.0;
      }
    } else if (prim.kind == PrimitiveKind::kPolyline) {
      for (std::size_t s = 0; s + 1 < prim.coords.size(); ++s) {
        const std::vector<Point> seg{prim.coords[s], prim.coords[s + 1]};
        const IndexRange range = cells_overlapping(seg, spec);
        if (range.empty) continue;
        for (std::size_t r = range.r0; r <= range.r1; ++r) {
          for (std::size_t c = range.c0; c <= range.c1; ++c) {
            const double len = clipped_length(seg[0], seg[1], cell_rect(spec, r, c));
            if (len > 0.0) measure[r * w + c] += len;
          }
        }
      }
    } else {
      std::vector<Point> ring = prim.coords;
      if (ring.front() == ring.back()) ring.pop_back();
      const IndexRange range = cells_overlapping(ring, spec);
      if (!range.empty) {
        for (std::size_t r = range.r0; r <= range.r1; ++r) {
          for (std::size_t c = range.c0; c <= range.c1; ++c) {
            const double area = clipped_area(ring, cell_rect(spec, r, c));
            if (area > 0.0) measure[r * w + c] += area;
          }
        }
      }
    }

    for (const auto& [idx, m] : measure) {
      switch (aggregator) {
        case Aggregator::kSumLength:
        case Aggregator::kSumArea: out[idx] += m; break;
        case Aggregator::kCount: out[idx] += 1.0; break;
        case Aggregator::kMeanAttribute:
          out[idx] += prim.attribute;
          hits[idx] += 1.0;
          break;
      }
    }
  }
  if (aggregator == Aggregator::kMeanAttribute) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (hits[i] > 0.0) out[i] /= hits[i];
    }
  }
  return out;
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double t = std::abs(x);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

// Sample at integer index i along one axis with the cubic boundary extension.
template <typename Get>
double extended(std::ptrdiff_t i, std::ptrdiff_t n, Get get) {
  if (i >= 0 && i < n) return get(i);
  if (i < 0) {
    return 3.0 * extended(i + 1, n, get) - 3.0 * extended(i + 2, n, get) +
           extended(i + 3, n, get);
  }
  return 3.0 * extended(i - 1, n, get) - 3.0 * extended(i - 2, n, get) +
         extended(i - 3, n, get);
}

}  // namespace

Tensor upscale_cubic(const CoarseField& coarse, const GridSpec& target) {
  coarse.spec.validate();
  target.validate();
  const std::size_t ch = coarse.spec.height, cw = coarse.spec.width;
  if (coarse.values.shape() != Shape{ch, cw}) {
    throw ShapeError("coarse values must be [h, w] matching its grid");
  }
  if (ch < 4 || cw < 4) {
    throw InsufficientSamples("cubic upscaling needs at least 4x4 coarse samples");
  }
  constexpr double kSlack = 1e-9;
  if (target.origin_easting < coarse.spec.origin_easting - kSlack ||
      target.origin_northing < coarse.spec.origin_northing - kSlack ||
      target.max_easting() > coarse.spec.max_easting() + kSlack ||
      target.max_northing() > coarse.spec.max_northing() + kSlack) {
    throw GridError("coarse grid does not cover the target extent");
  }
  const auto nh = static_cast<std::ptrdiff_t>(ch);
  const auto nw = static_cast<std::ptrdiff_t>(cw);
  auto sample = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
    // Extend along columns, then rows.
    auto row_value = [&](std::ptrdiff_t rr) {
      return extended(c, nw, [&](std::ptrdiff_t cc) {
        return coarse.values[static_cast<std::size_t>(rr) * cw +
                             static_cast<std::size_t>(cc)];
      });
    };
    return extended(r, nh, row_value);
  };

  Tensor out(Shape{target.height, target.width});
  const double step = coarse.spec.cell_size;
  const double e0 = coarse.spec.origin_easting + 0.5 * step;
  const double n0 = coarse.spec.origin_northing + 0.5 * step;
  for (std::size_t r = 0; r < target.height; ++r) {
    for (std::size_t c = 0; c < target.width; ++c) {
      const auto [e, n] = target.cell_center({r, c});
      const double u = (e - e0) / step;
      const double v = (n - n0) / step;
      const auto iu = static_cast<std::ptrdiff_t>(std::floor(u));
      const auto iv = static_cast<std::ptrdiff_t>(std::floor(v));
      double acc = 0.0;
      for (std::ptrdiff_t i = iv - 1; i <= iv + 2; ++i) {
        const double wv = cubic_kernel(v - static_cast<double>(i));
        if (wv == 0.0) continue;
        for (std::ptrdiff_t j = iu - 1; j <= iu + 2; ++j) {
          const double wu = cubic_kernel(u - static_cast<double>(j));
          if (wu == 0.0) continue;
          acc += wv * wu * sample(i, j);
        }
      }
      out[r * target.width + c] = acc;
    }
  }
  return out;
}

SensorMapping map_sensors_to_labels(const std::vector<SensorReading>& readings,
                                    const GridSpec& spec,
                                    std::size_t time_steps) {
  spec.validate();
  SensorMapping result{LabelGrid::empty(time_steps, spec), {}};
  Tensor counts(Shape{time_steps, spec.height, spec.width}, 0.0);
  for (const SensorReading& rd : readings) {
    if (rd.time_index < 0 ||
        static_cast<std::size_t>(rd.time_index) >= time_steps) {
      throw GridError("reading of sensor '" + rd.sensor_id +
                      "' has time_index outside [0, time_steps)");
    }
    if (!std::isfinite(rd.value)) {
      throw DomainError("reading of sensor '" + rd.sensor_id +
                        "' is not finite");
    }
    const auto cell = spec.cell_of(rd.easting, rd.northing);
    if (!cell) {
      result.rejected.push_back(rd);
      continue;
    }
    const std::size_t idx =
        (static_cast<std::size_t>(rd.time_index) * spec.height + cell->row) *
            spec.width +
        cell->col;
    result.labels.values[idx] += rd.value;
    counts[idx] += 1.0;
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] > 0.0) {
      result.labels.values[i] /= counts[i];
      result.labels.mask[i] = 1.0;
    }
  }
  return result;
}

std::size_t quadrant_of(Cell cell, const GridSpec& spec) {
  const std::size_t bottom = cell.row >= spec.height / 2 ? 1 : 0;
  const std::size_t right = cell.col >= spec.width / 2 ? 1 : 0;
  return bottom * 2 + right;
}

LocationSplit split_locations(std::vector<Cell> cells, const GridSpec& spec,
                              std::uint64_t seed) {
  spec.validate();
  if (cells.empty()) throw EmptyLabelSet("no labeled cells to split");
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());

  std::array<std::vector<Cell>, 4> quadrants;
  for (const Cell& c : cells) {
    if (c.row >= spec.height || c.col >= spec.width) {
      throw GridError("cell outside the grid");
    }
    quadrants[quadrant_of(c, spec)].push_back(c);
  }
  Rng rng(seed);
  LocationSplit split;
  for (auto& q : quadrants) {
    rng.shuffle(std::span<Cell>(q));
    const std::size_t n = q.size();
    const std::size_t n_train = n * 6 / 10;
    const std::size_t n_val = n * 2 / 10;
    for (std::size_t i = 0; i < n; ++i) {
      auto& bucket = i < n_train ? split.train
                     : i < n_train + n_val ? split.val
                                           : split.test;
      bucket.push_back(q[i]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

}  // namespace latte
