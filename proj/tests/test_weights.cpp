#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "scglue/weights.hpp"

using namespace scglue;
using Catch::Approx;

TEST_CASE("defining function") {
  auto g = Grid::annulus(3, 1.0, 4.0, 32, 2);
  auto x = defining_function(g);
  const double k = 2 * g->spacing();
  for (std::size_t i = 0; i < g->size(); ++i) {
    const double r = g->radius(i);
    const double a = r - 1.0, b = 4.0 - r;
    if (std::abs(a - b) >= k) CHECK(x(i) == Approx(std::max(0.0, std::min(a, b))).margin(1e-15));
    CHECK(x(i) >= 0.0);
    CHECK(x(i) >= std::max(0.0, std::min(a, b)) - 1e-15);
    CHECK(x(i) <= std::max(0.0, std::min(a, b)) + 0.5 * k);
  }
  CHECK(smooth_min(1.5, 1.5, 0.5) == 1.5);
  CHECK(smooth_min(1.0, 2.0, 0.5) == 1.0);
  auto line = Grid::interval(0.0, 6.0, 65, 2);
  auto xl = defining_function(line);
  for (std::size_t i = 0; i < line->size(); ++i)
    if (std::abs(line->coord(i, 0) - 3.0) < 1e-12) CHECK(xl(i) == Approx(3.0));
}

TEST_CASE("weight values") {
  WeightSpec s;
  s.a = 1;
  s.s = 1.0;
  auto v = weights_at(1.0, 2, s);
  CHECK(v.psi == Approx(std::exp(-1.0)));
  auto d = WeightSpec::defaults(3);
  CHECK(d.a == 3);
  CHECK(d.x_cut == Approx(1.0 / 640));
  CHECK(weights_at(1.0, 3, d).psi == Approx(0.36787944117144233));
  auto c = weights_at(1e-3, 3, d);
  CHECK(c.phi == Approx(1e-6));
  CHECK(c.psi == 0.0);
  CHECK(c.varphi == 0.0);
  WeightSpec bad = d;
  bad.x_cut = 1e-4;
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("weights are finite, nonnegative and monotone") {
  auto g = Grid::interval(0.0, 4.0, 401, 2);
  const auto spec = WeightSpec::defaults(3);
  auto w = eval_weights(g, 3, spec);
  double prev = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    CHECK(std::isfinite(w.psi(i)));
    CHECK(w.psi(i) >= 0.0);
    CHECK(w.varphi(i) >= 0.0);
    if (w.x(i) < spec.x_cut) CHECK(w.psi(i) == 0.0);
    const double x = g->coord(i, 0);
    // psi = x^3 e^{-1/x} increases on (0, 2]
    if (x > 0.0 && x <= 2.0) {
      CHECK(w.psi(i) >= prev);
      prev = w.psi(i);
    }
  }
}

TEST_CASE("weighted norms and inner products") {
  auto g = Grid::annulus(3, 1.0, 4.0, 24, 2);
  auto delta = constant_metric(g);
  auto one = make_scalar(g, [](const Point&) { return 1.0; });
  auto zero = make_scalar(g, [](const Point&) { return 0.0; });
  auto u = make_scalar(g, [](const Point& p) { return std::sin(p[0]) + p[1] * p[2]; });
  auto even = make_scalar(g, [](const Point& p) { return p[0] * p[0] + p[1] * p[2]; });
  auto odd = make_scalar(g, [](const Point& p) { return p[0] + p[1] * p[1] * p[2]; });
  auto w = eval_weights(g, 3, WeightSpec::defaults(3));
  const double n0 = weighted_norm(u, 0, w.phi, w.psi, delta);
  CHECK(weighted_inner(u, u, w.psi, delta) == Approx(n0 * n0).epsilon(1e-13));
  CHECK(n0 <= weighted_norm(u, 1, w.phi, w.psi, delta));
  CHECK(weighted_norm(u, 1, w.phi, w.psi, delta) <= weighted_norm(u, 2, w.phi, w.psi, delta));
  CHECK(weighted_norm(zero, 2, w.phi, w.psi, delta) == 0.0);
  CHECK(weighted_inner(zero, u, w.psi, delta) == 0.0);
  CHECK(std::abs(weighted_inner(even, odd, w.psi, delta)) < 1e-12);
  // psi = 1, k = 1 on u = 1: square root of the discrete volume.
  const double vol = integrate_volume(one, delta);
  CHECK(weighted_norm(one, 1, w.phi, one, delta) == Approx(std::sqrt(vol)).epsilon(1e-13));
  CHECK(weighted_norm(u, 0, w.phi, one, delta) ==
        Approx(std::sqrt(weighted_inner(u, u, one, delta))).epsilon(1e-13));
  CHECK_THROWS_AS(weighted_norm(u, 3, w.phi, w.psi, delta), DomainError);
}
