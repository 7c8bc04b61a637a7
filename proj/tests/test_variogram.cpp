#include <doctest.h>

#include <cmath>
#include <vector>

#include "latte/error.hpp"
#include "latte/rng.hpp"
#include "latte/variogram.hpp"

using namespace latte;

namespace {

Tensor points_1d(std::vector<double> xs) {
  const std::size_t n = xs.size();
  return Tensor({n, 1}, std::move(xs));
}

VariogramBins bins_from_curve(const VariogramModel& m, double lag_size,
                              std::size_t count = 100) {
  VariogramBins b;
  b.lag_size = lag_size;
  b.max_lag = 1.0;
  const std::size_t n = bin_count(lag_size);
  b.counts.assign(n, count);
  b.gamma.resize(n);
  for (std::size_t k = 0; k < n; ++k) b.gamma[k] = m(b.center(k));
  return b;
}

}  // namespace

TEST_SUITE("variogram") {
  TEST_CASE("pairwise lags are rescaled distances") {
    const Tensor lags = pairwise_lags(points_1d({0, 1, 2}));
    CHECK(lags.at({0, 1}) == 0.5);
    CHECK(lags.at({1, 2}) == 0.5);
    CHECK(lags.at({0, 2}) == 1.0);
    CHECK(lags.at({2, 0}) == 1.0);
    CHECK(lags.at({1, 1}) == 0.0);
    CHECK(pairwise_lags(points_1d({0, 10, 20})) == lags);
    CHECK_THROWS_AS(pairwise_lags(points_1d({3, 3, 3})), DegenerateEmbeddings);

    Rng rng(2);
    Tensor pts({12, 4});
    for (double& v : pts.data()) v = rng.normal();
    const Tensor l = pairwise_lags(pts);
    double mx = 0.0;
    for (double v : l.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mx = std::max(mx, v);
    }
    CHECK(mx == 1.0);
    CHECK(max_pairwise_distance(points_1d({-1, 4, 2})) == 5.0);
  }

  TEST_CASE("empirical semivariogram examples") {
    const Tensor lags = pairwise_lags(points_1d({0, 1, 2, 3.5}));
    const std::vector<double> constant{2, 2, 2, 2};
    const VariogramBins c = empirical_semivariogram(lags, constant, 0.1);
    CHECK(c.size() == 10);
    for (std::size_t b = 0; b < c.size(); ++b) {
      if (c.populated(b)) CHECK(c.gamma[b] == 0.0);
    }

    const std::vector<double> two{1, 3};
    const VariogramBins t = empirical_semivariogram(pairwise_lags(points_1d({0, 1})), two, 0.1);
    CHECK(t.bin_of(1.0) == 9);
    CHECK(t.counts[9] == 2);
    CHECK(t.gamma[9] == 4.0);
    CHECK(t.populated_count() == 1);

    const std::vector<double> v{0.3, -1.2, 2.0, 0.7};
    const std::vector<double> shifted{5.3, 3.8, 7.0, 5.7};
    const VariogramBins a = empirical_semivariogram(lags, v, 0.1);
    const VariogramBins s = empirical_semivariogram(lags, shifted, 0.1);
    CHECK(a.counts == s.counts);
    for (std::size_t b = 0; b < a.size(); ++b) {
      if (a.populated(b)) CHECK(a.gamma[b] == doctest::Approx(s.gamma[b]).epsilon(1e-12));
    }
  }

  TEST_CASE("empirical semivariogram matches a double loop") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t n = 50;
      Tensor pts({n, 3});
      for (double& v : pts.data()) v = rng.normal();
      std::vector<double> vals(n);
      for (double& v : vals) v = rng.normal();
      const Tensor lags = pairwise_lags(pts);
      const double lag_size = trial % 2 ? 0.1 : 0.05;
      const VariogramBins got = empirical_semivariogram(lags, vals, lag_size);
      const std::size_t nb = got.size();
      std::vector<double> sum(nb, 0.0);
      std::vector<std::size_t> cnt(nb, 0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          const double h = lags.at({i, j});
          std::size_t b = static_cast<std::size_t>(std::floor(h / lag_size));
          if (b >= nb) b = nb - 1;
          sum[b] += (vals[i] - vals[j]) * (vals[i] - vals[j]);
          ++cnt[b];
        }
      }
      for (std::size_t b = 0; b < nb; ++b) {
        CHECK(got.counts[b] == cnt[b]);
        if (cnt[b] > 0) {
          CHECK(got.gamma[b] == doctest::Approx(sum[b] / static_cast<double>(cnt[b])).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("Gaussian model family") {
    const VariogramModel m{0.1, 2.0, 0.6};
    CHECK(m(0.0) == doctest::Approx(0.1));
    CHECK(m(0.3) == doctest::Approx(0.1 + 2.0 * (1.0 - std::exp(-1.0))));
    double prev = m(0.0);
    for (int k = 1; k <= 100; ++k) {
      const double v = m(k / 100.0);
      CHECK(v >= prev);
      prev = v;
    }
  }

  TEST_CASE("fit recovers noise-free curves exactly") {
    const VariogramBins b = bins_from_curve({0.0, 2.0, 0.6}, 0.1);
    const FitResult f = fit_gaussian_model(b);
    CHECK(f.converged);
    CHECK(f.model.sill == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(f.model.range == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(f.residual < 1e-9);
    CHECK(f.model.nugget == 0.0);

    for (double r : {0.2, 0.35, 0.5, 0.8}) {
      const FitResult g = fit_gaussian_model(bins_from_curve({0.0, 0.7, r}, 0.05));
      CHECK(g.residual < 1e-9);
      CHECK(g.model.range == doctest::Approx(r).epsilon(1e-6));
    }

    FitOptions free;
    free.fix_nugget_zero = false;
    const FitResult n = fit_gaussian_model(bins_from_curve({0.3, 1.5, 0.5}, 0.05), free);
    CHECK(n.model.nugget == doctest::Approx(0.3).epsilon(1e-6));
    CHECK(n.model.sill == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(n.model.range == doctest::Approx(0.5).epsilon(1e-6));
  }

  TEST_CASE("flat semivariogram pins the range to its lower bound") {
    VariogramBins b = bins_from_curve({0.0, 1.0, 0.5}, 0.1);
    for (double& g : b.gamma) g = 1.3;
    const FitResult f = fit_gaussian_model(b);
    CHECK(f.range_at_lower_bound);
    CHECK(f.model.sill == doctest::Approx(1.3).epsilon(1e-6));
  }

  TEST_CASE("fit preconditions") {
    VariogramBins b = bins_from_curve({0.0, 1.0, 0.5}, 0.1);
    for (std::size_t k = 1; k < b.size(); ++k) b.counts[k] = 0;
    CHECK_THROWS_AS(fit_gaussian_model(b), InsufficientBins);
    b.counts[3] = 4;
    CHECK_NOTHROW(fit_gaussian_model(b));
    FitOptions free;
    free.fix_nugget_zero = false;
    CHECK_THROWS_AS(fit_gaussian_model(b, free), InsufficientBins);
    FitOptions bad;
    bad.range_lower = 0.5;
    bad.range_upper = 0.1;
    CHECK_THROWS_AS(fit_gaussian_model(b, bad), DomainError);
  }

  TEST_CASE("fit converges on noisy and boundary-seeking curves") {
    // Curves whose best range lies on or beyond the upper bound exercise the
    // bound handling of the optimizer.
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
      VariogramBins b;
      b.lag_size = 0.1;
      b.counts.resize(10);
      b.gamma.resize(10);
      const int kind = trial % 3;
      for (std::size_t k = 0; k < 10; ++k) {
        const double h = b.center(k);
        double g = kind == 0 ? 0.5 + rng.uniform()                         // flat noise
                 : kind == 1 ? 3.0 * h * h * (1.0 + 0.3 * rng.normal())     // still rising
                             : VariogramModel{0.0, 2.0, 0.4}(h) * (1.0 + 0.2 * rng.normal());
        b.gamma[k] = std::max(g, 0.0);
        b.counts[k] = 1 + rng.below(400);
      }
      FitOptions opt;
      opt.seed = static_cast<std::uint64_t>(trial);
      CHECK_NOTHROW(fit_gaussian_model(b, opt));
    }
  }

  TEST_CASE("bin distributions") {
    // Ten points on a line: lags k/9 fall strictly inside bins 1..8 and 9.
    const Tensor lags = pairwise_lags(points_1d({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
    const VariogramModel model{0.0, 1.0, 0.5};
    const std::vector<double> constant(10, 4.0);
    const auto c = bin_distributions(lags, constant, model, 0.1, 5);
    for (const auto& b : c) {
      if (b.valid) {
        CHECK(b.mu == 0.0);
        CHECK(b.sigma == 0.0);
      }
      // Bins centered beyond the range are invalid however full they are.
      if (b.bin >= 5) CHECK_FALSE(b.valid);
    }
    CHECK(c[0].count == 0);
    CHECK_FALSE(c[0].valid);
    CHECK(c[1].count == 18);
    CHECK(c[1].valid);
    CHECK(c[5].count == 10);

    // Alternating 0, 2 along the line: neighbors differ by 2, squared diff 4.
    std::vector<double> alt(10);
    for (std::size_t i = 0; i < 10; ++i) alt[i] = i % 2 ? 2.0 : 0.0;
    const auto a = bin_distributions(lags, alt, model, 0.1, 5);
    CHECK(a[1].mu == 4.0);
    CHECK(a[1].sigma == 0.0);
    CHECK(a[2].mu == 0.0);
    CHECK(a[2].sigma == 0.0);

    const auto strict = bin_distributions(lags, alt, model, 0.1, 100);
    for (const auto& b : strict) CHECK_FALSE(b.valid);
  }

  TEST_CASE("bin distribution moments use the population formula") {
    Rng rng(9);
    const std::size_t n = 40;
    Tensor pts({n, 2});
    for (double& v : pts.data()) v = rng.normal();
    std::vector<double> vals(n);
    for (double& v : vals) v = rng.normal();
    const Tensor lags = pairwise_lags(pts);
    const auto got = bin_distributions(lags, vals, {0.0, 1.0, 1.0}, 0.1, 5);
    for (const auto& b : got) {
      double s1 = 0.0, s2 = 0.0, m = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          std::size_t k = static_cast<std::size_t>(std::floor(lags.at({i, j}) / 0.1));
          if (k > 9) k = 9;
          if (k != b.bin) continue;
          const double d = (vals[i] - vals[j]) * (vals[i] - vals[j]);
          s1 += d;
          m += 1.0;
        }
      }
      if (m == 0.0) continue;
      const double mu = s1 / m;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          if (i == j) continue;
          std::size_t k = static_cast<std::size_t>(std::floor(lags.at({i, j}) / 0.1));
          if (k > 9) k = 9;
          if (k != b.bin) continue;
          const double d = (vals[i] - vals[j]) * (vals[i] - vals[j]);
          s2 += (d - mu) * (d - mu);
        }
      }
      CHECK(b.mu == doctest::Approx(mu).epsilon(1e-12));
      CHECK(b.sigma == doctest::Approx(std::sqrt(s2 / m)).epsilon(1e-9));
    }
  }

  TEST_CASE("pair sampling") {
    Rng rng(3);
    Tensor pts({30, 2});
    for (double& v : pts.data()) v = rng.normal();
    const double denom = max_pairwise_distance(pts);
    const auto all = sample_pairs(pts, denom, 2000, 2'000'000, rng);
    CHECK(all.size() == 30 * 29);
    for (const LagPair& p : all) {
      CHECK(p.i != p.j);
      CHECK(p.lag <= 1.0);
    }
    const auto some = sample_pairs(pts, denom, 10, 100, rng);
    CHECK(some.size() == 100);
    for (const LagPair& p : some) CHECK(p.i != p.j);
    // A smaller denominator clamps lags to 1.
    const auto clamped = sample_pairs(pts, 0.5 * denom, 2000, 1000, rng);
    double mx = 0.0;
    for (const LagPair& p : clamped) mx = std::max(mx, p.lag);
    CHECK(mx == 1.0);
    Rng r1(4), r2(4);
    const auto s1 = sample_pairs(pts, denom, 10, 50, r1);
    const auto s2 = sample_pairs(pts, denom, 10, 50, r2);
    for (std::size_t k = 0; k < s1.size(); ++k) CHECK(s1[k].i == s2[k].i);
  }

  TEST_CASE("variogram report") {
    const VariogramBins b = bins_from_curve({0.0, 2.0, 0.6}, 0.1);
    const FitResult f = fit_gaussian_model(b);
    const nlohmann::json r = variogram_report(b, f, 5);
    CHECK(r["bins"].size() == 10);
    CHECK(r["fitted"]["range"].get<double>() == doctest::Approx(0.6));
    CHECK(r["bins"][0].contains("center"));
    CHECK(r["bins"][0].contains("gamma"));
    CHECK(r["bins"][9]["valid"] == false);
    CHECK(r["bins"][0]["valid"] == true);
  }
}
