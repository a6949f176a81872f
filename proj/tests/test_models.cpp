#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "scglue/curvature.hpp"
#include "scglue/models.hpp"

using namespace scglue;
using Catch::Approx;

TEST_CASE("schwarzschild values") {
  auto s = MetricSpec::schwarzschild(3, 1.0);
  auto g = s.metric_at({2.0, 0.0, 0.0, 0.0});
  CHECK(g(0, 0) == Approx(2.44140625).epsilon(1e-15));
  CHECK(g(1, 1) == Approx(2.44140625).epsilon(1e-15));
  CHECK(g(0, 1) == 0.0);
  auto flat = MetricSpec::schwarzschild(3, 0.0).metric_at({0.3, 1.0, -2.0, 0.0});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(flat(i, j) == (i == j ? 1.0 : 0.0));
  CHECK_THROWS_AS(MetricSpec::schwarzschild(2, 1.0), DomainError);
}

TEST_CASE("pointwise scalar curvature") {
  CHECK(std::abs(MetricSpec::schwarzschild(3, 1.0).scalar_curvature({1.3, -0.4, 0.7, 0.0})) < 1e-12);
  CHECK(std::abs(MetricSpec::schwarzschild(4, 0.7).scalar_curvature({1.1, 0.2, 0.5, -0.3})) < 1e-12);
  // (1 + 1/(1+r^2)^{1/2})^4 delta: R = -8 U^{-5} lap0 U, lap0 (1+r^2)^{-1/2} = -3 (1+r^2)^{-5/2}
  auto c = MetricSpec::conformal(3, 1.0, {}, 1.0);
  const Point p{0.5, -0.2, 0.9, 0.0};
  const double q = 1.0 + 0.25 + 0.04 + 0.81;
  const double U = 1.0 + 1.0 / std::sqrt(q);
  CHECK(c.scalar_curvature(p) == Approx(24.0 * std::pow(q, -2.5) / std::pow(U, 5)).epsilon(1e-12));
  // warped with rho = r is flat
  CHECK(std::abs(MetricSpec::warped(3, 0.0, 1.0).scalar_curvature(p)) < 1e-12);
}

TEST_CASE("rescaling closes on schwarzschild") {
  const double lambda = 3.7;
  auto a = rescale(MetricSpec::schwarzschild(3, 1.2, {0.2, -0.1, 0.3, 0.0}), lambda);
  auto b = MetricSpec::schwarzschild(3, 1.2 / lambda, {0.2 / lambda, -0.1 / lambda, 0.3 / lambda, 0.0});
  for (const Point& p : {Point{1.0, 0.5, 0.2, 0.0}, Point{-2.0, 1.0, 3.0, 0.0}}) {
    auto ga = a.metric_at(p), gb = b.metric_at(p);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(ga(i, i) - gb(i, i)) <= 1e-12);
  }
  CHECK(rescale(rescale(a, 2.0), 0.5).scale == Approx(lambda));
}

TEST_CASE("ae_test parity and decay") {
  auto even = MetricSpec::ae_test(3, 1.5, 0.2, 0.0, 4, 1.0);
  auto mixed = MetricSpec::ae_test(3, 1.5, 0.2, 0.3, 4, 1.0);
  const Point p{1.1, -0.7, 2.3, 0.0}, mp{-1.1, 0.7, -2.3, 0.0};
  auto ge = even.metric_at(p), gem = even.metric_at(mp);
  auto gm = mixed.metric_at(p), gmm = mixed.metric_at(mp);
  bool odd_seen = false;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(ge(i, j) == gem(i, j));
      odd_seen = odd_seen || std::abs(gm(i, j) - gmm(i, j)) > 1e-4;
    }
  CHECK(odd_seen);
  // max|g - delta| halves when r -> 2^{1/alpha} r
  auto dev = [&](double r) {
    auto spec = MetricSpec::ae_test(3, 1.5, 0.2, 0.0, 4, 0.0);
    double d = 0.0;
    for (int k = 0; k < 200; ++k) {
      const double th = 0.1 + 2.9 * k / 199.0, ph = 0.7 * k;
      auto g = spec.metric_at({r * std::sin(th) * std::cos(ph), r * std::sin(th) * std::sin(ph), r * std::cos(th), 0.0});
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) d = std::max(d, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    }
    return d;
  };
  const double r = 400.0;
  CHECK(dev(r) / dev(std::pow(2.0, 1.0 / 1.5) * r) == Approx(2.0).epsilon(0.03));
  CHECK_THROWS_AS(MetricSpec::ae_test(3, 0.4, 0.1, 0.0, 1), DomainError);
}

TEST_CASE("sampling and excluded points") {
  auto grid = Grid::annulus(3, 1.0, 3.0, 33, 2);  // odd N: the origin is a node
  auto s = MetricSpec::schwarzschild(3, 1.0);
  auto g = sample(s, grid);
  for (auto i : grid->active_nodes()) {
    const double r = grid->radius(i);
    CHECK(g(i, 0, 0) == Approx(std::pow(1.0 + 0.5 / r, 4)).epsilon(1e-14));
  }
  auto R = ricci_scalar(g).second;
  CHECK(R.max_abs_active() < 5e-3);
  CHECK_THROWS_AS(sample(MetricSpec::schwarzschild(3, 1.0, {1.9, 0.0, 0.0, 0.0}), grid), DomainError);
  CHECK_THROWS_AS(sample(MetricSpec::schwarzschild(4, 1.0), grid), DomainError);
  CHECK_NOTHROW(sample(MetricSpec::schwarzschild(3, 1.0, {0.1, 0.0, 0.0, 0.0}), grid));
}

TEST_CASE("json round trip") {
  for (const auto& s : {MetricSpec::schwarzschild(3, 1.5, {0.1, 0.2, 0.3, 0.0}),
                        MetricSpec::ae_test(3, 1.5, 0.05, 0.01, 9, 0.8),
                        MetricSpec::bump(3, 0.1, {1.0, 0.0, 0.0, 0.0}, 1.2, 3),
                        MetricSpec::conformal(3, 0.5, {}, 1.0, 0.01, {2.0, 0.0, 0.0, 0.0}, 0.8),
                        MetricSpec::euclidean(4)}) {
    nlohmann::json j = s;
    auto back = metric_spec_from_json(j);
    nlohmann::json j2 = back;
    CHECK(j == j2);
    const Point p{1.7, -0.3, 0.4, 0.2};
    auto a = s.metric_at(p), b = back.metric_at(p);
    for (int i = 0; i < s.n; ++i)
      for (int k = 0; k < s.n; ++k) CHECK(a(i, k) == b(i, k));
  }
  CHECK_THROWS_AS(metric_spec_from_json({{"kind", "schwarzschild"}, {"mass", 1.0}}), ConfigError);
  CHECK_THROWS_AS(metric_spec_from_json({{"kind", "kerr"}}), ConfigError);
  CHECK_THROWS_AS(metric_spec_from_json({{"kind", "ae_test"}, {"alpha", 0.2}}), ConfigError);
}
