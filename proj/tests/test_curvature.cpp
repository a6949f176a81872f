#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "scglue/curvature.hpp"

using namespace scglue;
using Catch::Approx;

namespace {

MetricField conformal(const GridPtr& g, auto factor) {
  SymTensorField m(g);
  for (std::size_t i = 0; i < g->size(); ++i) {
    const double f = factor(g->point(i));
    for (int a = 0; a < g->dim(); ++a) m.at(i, a, a) = f;
  }
  return MetricField(std::move(m));
}

double schwarzschild_max_R(int N) {
  auto g = Grid::annulus(3, 2.0, 3.0, N, 2);
  auto metric = conformal(g, [](const Point& p) {
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    return std::pow(1.0 + 0.5 / r, 4);
  });
  auto [ric, R] = ricci_scalar(metric);
  return R.max_abs_active();
}

}  // namespace

TEST_CASE("constant metrics are flat") {
  auto g = Grid::annulus(3, 1.0, 4.0, 20, 2);
  for (double c : {1.0, 4.0}) {
    auto metric = constant_metric(g, c);
    auto gam = christoffel(metric);
    auto [ric, R] = ricci_scalar(metric);
    for (auto v : gam.values()) CHECK(v == 0.0);
    for (auto v : ric.values()) CHECK(v == 0.0);
    for (auto v : R.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("conformally flat e^{2x} delta") {
  auto g = Grid::annulus(3, 1.0, 3.0, 64, 2);
  auto metric = conformal(g, [](const Point& p) { return std::exp(2 * p[0]); });
  auto gam = christoffel(metric);
  auto [ric, R] = ricci_scalar(metric);
  const int ns = sym_size(3);
  double eg = 0.0, eR = 0.0, sym = 0.0;
  for (auto i : g->active_nodes()) {
    eg = std::max(eg, std::abs(gam(i, 0 * ns + sym_index(0, 0, 3)) - 1.0));
    // R = e^{-2 phi}(-2(n-1) lap phi - (n-1)(n-2)|d phi|^2) with phi = x^1, n = 3.
    const double exact = -2.0 * std::exp(-2 * g->coord(i, 0));
    eR = std::max(eR, std::abs(R(i) - exact) / std::abs(exact));
  }
  CHECK(eg < 1e-4);
  CHECK(eR < 1e-4);
  (void)sym;
}

TEST_CASE("Schwarzschild is scalar flat at fourth order") {
  const double coarse = schwarzschild_max_R(48);
  const double fine = schwarzschild_max_R(96);
  INFO("max|R| " << coarse << " -> " << fine);
  CHECK(coarse < 1e-3);
  CHECK(coarse / fine > 10.0);
  CHECK(coarse / fine < 22.0);
}

TEST_CASE("Hessian and positive Laplacian") {
  auto g = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto delta = constant_metric(g);
  auto u = make_scalar(g, [](const Point& p) { return p[0] * p[0]; });
  auto [hess, lap] = hessian_laplacian(delta, u);
  for (auto i : g->active_nodes()) {
    CHECK(hess.at(i, 0, 0) == Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(hess.at(i, 0, 1)) < 1e-12);
    CHECK(std::abs(hess.at(i, 1, 1)) < 1e-12);
    CHECK(lap(i) == Approx(-2.0).epsilon(1e-12));
  }
  for (auto f : {+[](const Point& p) { return p[0]; }, +[](const Point&) { return 1.0; }}) {
    auto v = make_scalar(g, f);
    auto [h2, l2] = hessian_laplacian(delta, v);
    for (auto i : g->active_nodes()) {
      CHECK(std::abs(l2(i)) < 1e-13);
      for (int c = 0; c < 6; ++c) CHECK(std::abs(h2(i, c)) < 1e-13);
    }
  }
}

TEST_CASE("double divergence") {
  auto g = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto delta = constant_metric(g);
  SymTensorField h(g), hc(g), hl(g);
  for (std::size_t i = 0; i < g->size(); ++i) {
    const double x = g->coord(i, 0);
    for (int a = 0; a < 3; ++a) h.at(i, a, a) = x * x;
    hc.at(i, 0, 1) = 0.7;
    hc.at(i, 2, 2) = -1.3;
    // du (x) du with u = 2 x^1 - x^3
    hl.at(i, 0, 0) = 4.0;
    hl.at(i, 0, 2) = -2.0;
    hl.at(i, 2, 2) = 1.0;
  }
  auto dd = div_div(delta, h);
  auto dc = div_div(delta, hc);
  auto dl = div_div(delta, hl);
  for (auto i : g->active_nodes()) {
    CHECK(dd(i) == Approx(2.0).epsilon(1e-11));
    CHECK(dc(i) == 0.0);
    CHECK(dl(i) == 0.0);
  }
}

TEST_CASE("inner products and traces") {
  auto g = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto delta = constant_metric(g);
  auto four = constant_metric(g, 4.0);
  SymTensorField id(g), zero(g), A(g);
  for (std::size_t i = 0; i < g->size(); ++i)
    for (int a = 0; a < 3; ++a) {
      id.at(i, a, a) = 1.0;
      A.at(i, a, a) = a + 1.0;
    }
  auto [in1, tr1] = inner_and_trace(delta, id, id);
  auto [in2, tr2] = inner_and_trace(four, id, id);
  auto [in3, tr3] = inner_and_trace(delta, A, zero);
  const auto i = g->active_nodes()[0];
  CHECK(in1(i) == 3.0);
  CHECK(tr1(i) == 3.0);
  CHECK(in2(i) == Approx(3.0 / 16.0));
  CHECK(tr2(i) == Approx(0.75));
  CHECK(in3(i) == 0.0);
  CHECK(tr3(i) == 6.0);
}

TEST_CASE("Ricci symmetry and scaling") {
  auto g = Grid::annulus(3, 1.0, 3.0, 64, 2);
  auto bumpy = [](const Point& p) {
    return std::exp(0.1 * std::sin(p[0]) * std::cos(0.5 * p[1]) + 0.05 * p[2]);
  };
  auto m1 = conformal(g, bumpy);
  SymTensorField scaled = m1.metric();
  scaled *= 9.0;
  MetricField m2(scaled);
  auto [r1, R1] = ricci_scalar(m1);
  auto [r2, R2] = ricci_scalar(m2);
  for (auto i : g->active_nodes()) {
    CHECK(std::abs(R2(i) - R1(i) / 9.0) <= 1e-12 * (1 + std::abs(R1(i))));
    for (int c = 0; c < 6; ++c) CHECK(std::abs(r2(i, c) - r1(i, c)) <= 1e-12 * (1 + std::abs(r1(i, c))));
  }
}
