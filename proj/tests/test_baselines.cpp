#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "latte/baselines.hpp"
#include "latte/error.hpp"
#include "latte/rng.hpp"

using namespace latte;

namespace {

ObservationSet random_obs(Rng& rng, std::size_t n, double extent = 100.0) {
  ObservationSet obs(n);
  for (Observation& o : obs) {
    o.easting = extent * rng.uniform();
    o.northing = extent * rng.uniform();
    o.value = rng.normal();
  }
  return obs;
}

std::vector<Coordinate> random_targets(Rng& rng, std::size_t n, double extent = 100.0) {
  std::vector<Coordinate> t(n);
  for (auto& [x, y] : t) {
    x = extent * rng.uniform();
    y = extent * rng.uniform();
  }
  return t;
}

// Builds the same kriging system from the fitted variogram and solves it
// densely with Eigen.
Eigen::VectorXd dense_solution(const OrdinaryKriging& ok, Coordinate target) {
  const ObservationSet& p = ok.points();
  const auto n = static_cast<Eigen::Index>(p.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + 1, n + 1);
  Eigen::VectorXd b(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& pi = p[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& pj = p[static_cast<std::size_t>(j)];
      if (i != j) a(i, j) = ok.variogram()(std::hypot(pi.easting - pj.easting, pi.northing - pj.northing));
    }
    a(i, n) = 1.0;
    a(n, i) = 1.0;
    b(i) = ok.variogram()(std::hypot(target.first - pi.easting, target.second - pi.northing));
  }
  b(n) = 1.0;
  return a.fullPivLu().solve(b);
}

}  // namespace

TEST_SUITE("baselines") {
  TEST_CASE("IDW examples") {
    const std::vector<Coordinate> targets{{0, 0}, {5, -3}, {100, 100}};
    for (double v : idw_predict({{1, 1, 7.5}}, targets)) CHECK(v == 7.5);

    const ObservationSet pair{{-1, 0, 0.0}, {1, 0, 10.0}};
    const std::vector<Coordinate> mid{{0, 0}, {0, 4}};
    for (double v : idw_predict(pair, mid)) CHECK(v == doctest::Approx(5.0).epsilon(1e-15));

    const ObservationSet near_far{{1, 0, 0.0}, {0, 2, 9.0}};
    const std::vector<Coordinate> origin{{0, 0}};
    CHECK(idw_predict(near_far, origin)[0] == doctest::Approx(1.8).epsilon(1e-14));

    const std::vector<Coordinate> on_obs{{0, 2}, {1, 0}};
    const auto exact = idw_predict(near_far, on_obs);
    CHECK(exact[0] == 9.0);
    CHECK(exact[1] == 0.0);
    CHECK_THROWS_AS(idw_predict({}, origin), EmptyLabelSet);
  }

  TEST_CASE("IDW matches a weighted-sum oracle and stays in range") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      const ObservationSet obs = random_obs(rng, 1 + rng.below(50));
      const auto targets = random_targets(rng, 30);
      const double power = trial % 2 ? 2.0 : 1.0 + rng.uniform();
      const auto got = idw_predict(obs, targets, power);
      double lo = obs[0].value, hi = obs[0].value;
      for (const auto& o : obs) {
        lo = std::min(lo, o.value);
        hi = std::max(hi, o.value);
      }
      for (std::size_t k = 0; k < targets.size(); ++k) {
        double num = 0.0, den = 0.0;
        for (const auto& o : obs) {
          const double d = std::hypot(targets[k].first - o.easting, targets[k].second - o.northing);
          num += o.value / std::pow(d, power);
          den += 1.0 / std::pow(d, power);
        }
        CHECK(got[k] == doctest::Approx(num / den).epsilon(1e-12));
        CHECK(got[k] >= lo - 1e-12);
        CHECK(got[k] <= hi + 1e-12);
      }
    }
  }

  TEST_CASE("OK reproduces observations and weights sum to one") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const ObservationSet obs = random_obs(rng, 3 + rng.below(30));
      KrigingOptions opt;
      opt.seed = static_cast<std::uint64_t>(trial);
      const OrdinaryKriging ok = OrdinaryKriging::fit(obs, opt);
      CHECK(ok.variogram().nugget == 0.0);
      for (const Observation& o : obs) {
        CHECK(ok.predict({o.easting, o.northing}) == doctest::Approx(o.value).epsilon(1e-6).scale(1.0));
      }
      for (const Coordinate& t : random_targets(rng, 10)) {
        const auto sol = ok.solve(t);
        double s = 0.0;
        for (double w : sol.weights) s += w;
        CHECK(std::abs(s - 1.0) <= 1e-10);
      }
    }
  }

  TEST_CASE("OK symmetric pair gives the mean at the midpoint") {
    const ObservationSet pair{{0, 0, 2.0}, {10, 0, 6.0}};
    const std::vector<Coordinate> mid{{5, 0}, {5, 7}};
    for (double v : ok_predict(pair, mid)) CHECK(v == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(ok_predict({{3, 4, 1.25}}, mid)[0] == 1.25);
  }

  TEST_CASE("OK matches a dense solve of the same system") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
      const ObservationSet obs = random_obs(rng, 5, 50.0);
      const OrdinaryKriging ok = OrdinaryKriging::fit(obs);
      for (const Coordinate& t : random_targets(rng, 8, 50.0)) {
        const Eigen::VectorXd ref = dense_solution(ok, t);
        const auto sol = ok.solve(t);
        double y = 0.0;
        for (std::size_t i = 0; i < 5; ++i) {
          CHECK(sol.weights[i] == doctest::Approx(ref(static_cast<Eigen::Index>(i))).epsilon(1e-8).scale(1.0));
          y += ref(static_cast<Eigen::Index>(i)) * obs[i].value;
        }
        CHECK(sol.multiplier == doctest::Approx(ref(5)).epsilon(1e-8).scale(1.0));
        CHECK(ok.predict(t) == doctest::Approx(y).epsilon(1e-8).scale(1.0));
      }
    }
  }

  TEST_CASE("OK merges duplicate coordinates") {
    const ObservationSet obs{{0, 0, 1.0}, {0, 0, 3.0}, {10, 0, 5.0}, {0, 10, 7.0}, {10, 10, 4.0}};
    const OrdinaryKriging ok = OrdinaryKriging::fit(obs);
    REQUIRE(ok.points().size() == 4);
    CHECK(ok.points()[0].value == 2.0);
    CHECK(ok.predict({0, 0}) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK_THROWS_AS(ok_predict({}, std::vector<Coordinate>{{0, 0}}), EmptyLabelSet);
    const ObservationSet bad{{0, 0, NAN}, {1, 1, 1.0}, {2, 0, 1.0}};
    CHECK_THROWS_AS(OrdinaryKriging::fit(bad), DomainError);
  }

  TEST_CASE("predictions are translation-equivariant in the value") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
      const ObservationSet obs = random_obs(rng, 12);
      ObservationSet shifted = obs;
      for (Observation& o : shifted) o.value += 3.5;
      const auto targets = random_targets(rng, 20);
      const auto a = idw_predict(obs, targets);
      const auto b = idw_predict(shifted, targets);
      const auto c = ok_predict(obs, targets);
      const auto d = ok_predict(shifted, targets);
      for (std::size_t k = 0; k < targets.size(); ++k) {
        CHECK(std::abs(b[k] - a[k] - 3.5) <= 1e-9);
        CHECK(std::abs(d[k] - c[k] - 3.5) <= 1e-9);
      }
    }
  }

  TEST_CASE("interpolate_field covers every cell per time step") {
    const GridSpec spec{0.0, 0.0, 10.0, 4, 5};
    LabelGrid labels = LabelGrid::empty(3, spec);
    const std::vector<Cell> cells{{0, 0}, {3, 4}, {1, 2}, {2, 0}};
    for (std::size_t t = 0; t < 3; ++t) {
      for (std::size_t k = 0; k < cells.size(); ++k) {
        labels.values.at({t, cells[k].row, cells[k].col}) = static_cast<double>(t * 10 + k);
        labels.mask.at({t, cells[k].row, cells[k].col}) = 1.0;
      }
    }
    // A cell outside the supplied set is ignored even if labeled.
    labels.values.at({1, 3, 0}) = 1e6;
    labels.mask.at({1, 3, 0}) = 1.0;

    for (BaselineMethod m : {BaselineMethod::kIdw, BaselineMethod::kOk}) {
      const Tensor f = interpolate_field(labels, spec, cells, m, 1, 3);
      REQUIRE(f.shape() == std::vector<std::size_t>{2, 4, 5});
      for (std::size_t k = 0; k < cells.size(); ++k) {
        CHECK(f.at({0, cells[k].row, cells[k].col}) ==
              doctest::Approx(10.0 + static_cast<double>(k)).epsilon(1e-6));
      }
      for (double v : f.data()) CHECK(v < 1e5);
    }

    std::vector<Coordinate> centers;
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 5; ++c) centers.push_back(spec.cell_center({r, c}));
    }
    ObservationSet obs;
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const auto [e, n] = spec.cell_center(cells[k]);
      obs.push_back({e, n, 20.0 + static_cast<double>(k)});
    }
    const auto direct = idw_predict(obs, centers);
    const Tensor f = interpolate_field(labels, spec, cells, BaselineMethod::kIdw, 2, 3);
    for (std::size_t i = 0; i < direct.size(); ++i) CHECK(f.data()[i] == direct[i]);
    CHECK_THROWS_AS(interpolate_field(labels, spec, cells, BaselineMethod::kIdw, 2, 4), GridError);
  }
}
