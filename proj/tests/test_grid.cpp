#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "scglue/grid.hpp"
#include "scglue/quadrature.hpp"

using namespace scglue;
using Catch::Approx;

TEST_CASE("annulus mask matches the shell definition") {
  auto g = Grid::annulus(3, 1.0, 4.0, 32, 2);
  const double dx = g->spacing();
  CHECK(dx == Approx(8.0 / 31.0));
  std::size_t count = 0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    const double r = g->radius(i);
    bool in_box = true;
    for (int a = 0; a < 3; ++a) in_box = in_box && std::abs(g->coord(i, a)) <= 4.0 + 1e-12;
    const bool expect = in_box && r >= 1.0 + 2 * dx - 1e-9 && r <= 4.0 - 2 * dx + 1e-9;
    CHECK(g->is_active(i) == expect);
    count += expect;
    CHECK(g->is_active(g->mirror(i)) == g->is_active(i));
  }
  CHECK(count == g->active_nodes().size());
  for (auto i : g->active_nodes()) CHECK(g->depth(i) >= 4);
}

TEST_CASE("2-D annulus is reflection symmetric") {
  auto g = Grid::annulus(2, 1.0, 2.0, 32, 2);
  CHECK(!g->active_nodes().empty());
  for (auto i : g->active_nodes()) CHECK(g->is_active(g->mirror(i)));
}

TEST_CASE("grid construction errors") {
  CHECK_THROWS_AS(Grid::annulus(3, 4.0, 1.0, 32, 2), DomainError);
  CHECK_THROWS_AS(Grid::annulus(3, 1.0, 4.0, 6, 2), DomainError);
  CHECK_THROWS_AS(Grid::annulus(3, 1.0, 4.0, 32, 1), DomainError);
  CHECK_THROWS_AS(Grid::annulus(2, 1.0, 2.0, 16, 2), DomainError);
  CHECK_THROWS_AS(Grid::interval(0.0, 1.0, 4, 2), DomainError);
}

TEST_CASE("interval grids") {
  auto g = Grid::interval(0.0, 6.0, 64, 2);
  CHECK(g->nominal_nodes() == 64);
  CHECK(g->spacing() == Approx(6.0 / 63.0));
  CHECK(g->active_nodes().size() == 60);
  auto s = Grid::interval(-1.0, 1.0, 32, 3);
  for (auto i : s->active_nodes()) CHECK(s->is_active(s->mirror(i)));
  CHECK(s->coord(s->active_nodes().front(), 0) == Approx(-s->coord(s->active_nodes().back(), 0)));
}

TEST_CASE("finite differences are exact on cubics") {
  auto g = Grid::annulus(3, 1.0, 4.0, 24, 2);
  auto cube = make_scalar(g, [](const Point& p) { return p[0] * p[0] * p[0]; });
  auto sq = make_scalar(g, [](const Point& p) { return p[0] * p[0]; });
  auto lin = make_scalar(g, [](const Point& p) { return p[0]; });
  auto d1 = fd_partial(cube, 0, 1);
  auto d2 = fd_partial(sq, 0, 2);
  auto d3 = fd_partial(lin, 1, 1);
  for (auto i : g->active_nodes()) {
    const double x = g->coord(i, 0);
    CHECK(std::abs(d1(i) - 3 * x * x) < 1e-10);
    CHECK(std::abs(d2(i) - 2.0) < 1e-10);
    CHECK(d3(i) == 0.0);
  }
  CHECK_THROWS_AS(fd_partial(lin, 3, 1), DomainError);
}

TEST_CASE("first derivative converges at fourth order") {
  auto err = [](int N) {
    auto g = Grid::annulus(2, 0.5, 3.0, N, 2);
    auto f = make_scalar(g, [](const Point& p) { return std::sin(p[0]); });
    auto d = fd_partial(f, 0, 1);
    double e = 0.0;
    for (auto i : g->active_nodes()) e = std::max(e, std::abs(d(i) - std::cos(g->coord(i, 0))));
    return e;
  };
  const double ratio = err(33) / err(65);
  CHECK(ratio > 12.0);
  CHECK(ratio < 20.0);
}

TEST_CASE("volume integrals") {
  auto g = Grid::annulus(3, 1.0, 4.0, 32, 2);
  auto one = make_scalar(g, [](const Point&) { return 1.0; });
  auto zero = make_scalar(g, [](const Point&) { return 0.0; });
  auto delta = constant_metric(g, 1.0);
  auto four = constant_metric(g, 4.0);
  const double v = integrate_volume(one, delta);
  // The active shell is [1+2dx, 4-2dx]; compare against that shell's volume.
  const double dx = g->spacing();
  const double shell = 4.0 / 3.0 * std::numbers::pi * (std::pow(4 - 2 * dx, 3) - std::pow(1 + 2 * dx, 3));
  CHECK(std::abs(v - shell) / shell < 0.05);
  CHECK(integrate_volume(zero, delta) == 0.0);
  CHECK(integrate_volume(one, four) == Approx(8.0 * v).epsilon(1e-14));
  CHECK(integrate_volume(one, delta) == v);
}

TEST_CASE("sphere quadrature") {
  auto one = [](const Point&, const Point&) { return 1.0; };
  CHECK(sphere_quadrature(3, 2.5, one) == Approx(4 * std::numbers::pi * 6.25).epsilon(1e-13));
  CHECK(std::abs(sphere_quadrature(3, 1.0, [](const Point&, const Point& nu) { return nu[0]; })) < 1e-12);
  CHECK(sphere_quadrature(2, 1.0, one) == Approx(2 * std::numbers::pi).epsilon(1e-13));
  // Y_2^0 ~ 3 cos^2 - 1 integrates to zero; cos^2 to 4 pi / 3.
  CHECK(std::abs(sphere_quadrature(3, 1.0, [](const Point&, const Point& nu) { return 3 * nu[2] * nu[2] - 1; })) <
        1e-10);
  CHECK(sphere_quadrature(3, 1.0, [](const Point&, const Point& nu) { return nu[0] * nu[0]; }) ==
        Approx(4 * std::numbers::pi / 3).epsilon(1e-12));
  CHECK(sphere_quadrature(4, 1.5, one, 12) == Approx(2 * std::numbers::pi * std::numbers::pi * 3.375).epsilon(1e-12));
  CHECK_THROWS_AS(sphere_quadrature(5, 1.0, one), DomainError);
  const auto rule = gauss_legendre(20);
  double s = 0.0;
  for (int i = 0; i < 20; ++i) s += rule.weights[i] * std::pow(rule.nodes[i], 38);
  CHECK(s == Approx(2.0 / 39.0).epsilon(1e-13));
}

TEST_CASE("pairwise sums are deterministic and metric inverse is accurate") {
  auto g = Grid::annulus(3, 1.0, 4.0, 20, 2);
  SymTensorField m(g);
  for (std::size_t i = 0; i < g->size(); ++i) {
    auto p = g->point(i);
    m.at(i, 0, 0) = 2.0 + 0.1 * p[0];
    m.at(i, 1, 1) = 3.0;
    m.at(i, 2, 2) = 1.5;
    m.at(i, 0, 1) = 0.3;
    m.at(i, 1, 2) = -0.2;
  }
  MetricField mf(m);
  for (std::size_t i = 0; i < g->size(); i += 97)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += mf(i, a, k) * mf.inv(i, k, b);
        CHECK(std::abs(s - (a == b ? 1.0 : 0.0)) < 1e-12);
      }
  SymTensorField bad(g);
  CHECK_THROWS_AS(MetricField(bad), SolverError);
}
