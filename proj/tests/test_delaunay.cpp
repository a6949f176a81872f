#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "scglue/delaunay.hpp"

using namespace scglue;
using Catch::Approx;

TEST_CASE("cylinder constants and the constant orbit") {
  CHECK(cylinder_value(3) == Approx(std::pow(3.0, -0.25)).epsilon(1e-15));
  CHECK(neck_bound(3) == Approx(std::pow(2.0, -0.25)).epsilon(1e-15));
  auto o = ode_solve(3, cylinder_value(3), 20.0);
  CHECK(o.degenerate);
  for (double u : o.u) CHECK(std::abs(u - cylinder_value(3)) <= 1e-10);
  CHECK(o.T == Approx(2.0 * std::numbers::pi).epsilon(1e-14));
  // the residual of the ODE at the constant is zero
  const double u = cylinder_value(3);
  CHECK(std::abs(0.25 * u - 0.75 * std::pow(u, 5)) <= 1e-15);
}

TEST_CASE("neck size validation") {
  CHECK_THROWS_AS(ode_solve(3, 0.0, 1.0), DomainError);
  CHECK_THROWS_AS(ode_solve(3, 0.8, 1.0), DomainError);
  CHECK_THROWS_AS(ode_solve(2, 0.5, 1.0), DomainError);
  CHECK_THROWS_AS(glue_delaunay_1d(3, 0.85, delaunay_source(3, 0.5), {}), ConfigError);
  CHECK_THROWS_AS(glue_delaunay_1d(3, 0.8, delaunay_source(3, 0.5), {}), HypothesisError);
}

TEST_CASE("energy conservation and periodicity") {
  for (double eps : {0.3, 0.5, 0.7}) {
    const auto o1 = ode_solve(3, eps, 1.0, 1e-13, 2);
    const auto o = ode_solve(3, eps, 10.0 * o1.T, 1e-13, 4001);
    INFO("eps " << eps << " drift " << o.energy_drift);
    CHECK(o.energy_drift <= 1e-10);
    CHECK(return_error(o) <= 1e-8);
    CHECK(o.u_max > cylinder_value(3));
    CHECK(o.u_max < 1.0);
    for (double u : o.u) CHECK(u >= eps - 1e-12);
  }
  const std::string csv = ode_solve(3, 0.5, 1.0, 1e-13, 3).csv();
  CHECK(csv.substr(0, csv.find('\n')) == "y,u,du,E");
}

TEST_CASE("period") {
  const double T = period(3, 0.99 * cylinder_value(3)).T;
  CHECK(std::abs(T - 2.0 * std::numbers::pi) <= 0.01 * 2.0 * std::numbers::pi);
  const double a = period(3, 0.5).T, b = period(3, 0.51).T;
  CHECK(std::abs(a - b) < 0.1);
  CHECK(std::abs(period(3, 0.5, 1e-11).T - a) <= 1e-8);
  CHECK(std::abs(period(3, 0.51, 1e-11).T - b) <= 1e-8);
  // half period symmetry: u at T/2 is the maximum
  const auto o = ode_solve(3, 0.5, a, 1e-13, 3);
  CHECK(std::abs(o.up[1]) <= 1e-9);
  CHECK(o.u[1] == Approx(o.u_max).epsilon(1e-10));
  CHECK(std::abs(o.u[2] - 0.5) <= 1e-9);
  CHECK(period(4, 0.5).T > 0.0);
}

TEST_CASE("arclength form") {
  const auto cyl = ode_solve(3, cylinder_value(3), 1.0);
  const auto fc = arclength_form(cyl, 64);
  for (double f : fc.f) CHECK(f == Approx(2.0 * std::log(cylinder_value(3))).epsilon(1e-15));

  for (double eps : {0.3, 0.5, 0.7}) {
    const auto o = ode_solve(3, eps, 1.0);
    const auto af = arclength_form(o, 1024);
    // round trip: u from f against the y-integration at y(x)
    std::vector<double> ys;
    for (std::size_t i = 0; i < af.x.size(); i += 97) ys.push_back(af.y[i]);
    double err = 0.0;
    for (std::size_t k = 0; k < ys.size(); ++k) {
      const auto oy = ode_solve(3, eps, std::max(ys[k], 1e-12), 1e-13, 2);
      err = std::max(err, std::abs(oy.u.back() - std::exp(0.5 * af.f[k * 97])));
    }
    CHECK(err <= 1e-8);
    // Delaunay metrics have constant scalar curvature n(n-1)
    const auto geo = warped_geometry(af.f, af.spacing(), 3, true);
    double worst = 0.0;
    for (double r : geo.R()) worst = std::max(worst, std::abs(r - 6.0));
    INFO("eps " << eps << " |R - 6| = " << worst);
    CHECK(worst <= 1e-6);
  }
  // w = 0: the product metric dx^2 + h has R = (n-1)(n-2)
  const auto prod = warped_geometry(std::vector<double>(32, 0.0), 0.1, 3);
  for (double r : prod.R()) CHECK(r == 2.0);
}

TEST_CASE("static potential") {
  for (double eps : {0.3, 0.5, 0.7}) {
    const auto o = ode_solve(3, eps, 1.0);
    const auto sp = static_potential(o);
    CHECK(sp.residual <= 1e-6);
    double mx = 0.0;
    for (double v : sp.N) mx = std::max(mx, std::abs(v));
    CHECK(mx == Approx(1.0).epsilon(1e-4));
    CHECK(std::abs(sp.N[0]) <= 1e-15);
    CHECK(std::abs(sp.lambda) > 0.0);
    // N is proportional to (e^f)'
    const auto s = delaunay_samples(3, eps, {0.3, 0.9, 1.7});
    const double r0 = s.N[0] / (s.v[0] / s.u[0]);
    for (int i = 1; i < 3; ++i) CHECK(s.N[i] / (s.v[i] / s.u[i]) == Approx(r0).epsilon(1e-9));
  }
  const auto cyl = static_potential(ode_solve(3, cylinder_value(3), 1.0));
  CHECK(cyl.residual <= 1e-6);
}

TEST_CASE("reduced operators") {
  const int m = 200;
  const double h = 0.02;
  std::vector<double> A(m), W(m), a(m), b(m), u(m);
  for (int j = 0; j < m; ++j) {
    const double x = j * h;
    A[j] = 1.0 + 0.1 * std::sin(x);
    W[j] = 0.3 * std::cos(1.3 * x);
    const double bump = std::exp(-30.0 * (x - 2.0) * (x - 2.0));
    a[j] = bump * std::cos(x);
    b[j] = 0.5 * bump;
    u[j] = std::exp(-20.0 * (x - 2.0) * (x - 2.0)) * (1.0 + x);
  }
  const WarpedGeometry geo(A, W, h, 3);
  const auto Ph = geo.P(a, b);
  // linearization: the Taylor defect shrinks by ~4 when t halves
  std::vector<double> d;
  for (double t : {1e-2, 5e-3, 2.5e-3}) {
    std::vector<double> At(m), Wt(m);
    for (int j = 0; j < m; ++j) {
      At[j] = A[j] + t * a[j];
      Wt[j] = W[j] + 0.5 * std::log1p(t * b[j]);
    }
    const auto Rt = reduced_scalar_curvature(At, Wt, h, 3);
    double mx = 0.0;
    for (int j = 0; j < m; ++j) mx = std::max(mx, std::abs(Rt[j] - geo.R()[j] - t * Ph[j]));
    d.push_back(mx);
  }
  CHECK(d[0] / d[1] == Approx(4.0).margin(0.8));
  CHECK(d[1] / d[2] == Approx(4.0).margin(0.8));
  const auto [as, bs] = geo.Pstar(u);
  // duality for compactly supported data
  double lhs = 0.0, rhs = 0.0;
  for (int j = 0; j < m; ++j) {
    lhs += u[j] * Ph[j] * geo.density(j) * h;
    rhs += geo.pair(j, a[j], b[j], as[j], bs[j]) * geo.density(j) * h;
  }
  INFO(lhs << " vs " << rhs);
  CHECK(std::abs(lhs - rhs) <= 1e-6 * std::abs(lhs));
}

TEST_CASE("two-backend scalar curvature") {
  const auto spec = MetricSpec::warped(3, 0.1, 1.0);
  const double e1 = warped_backend_discrepancy(spec, Grid::annulus(3, 1.0, 3.0, 24, 2), 1.5, 2.5);
  const double e2 = warped_backend_discrepancy(spec, Grid::annulus(3, 1.0, 3.0, 48, 2), 1.5, 2.5);
  INFO(e1 << " -> " << e2);
  CHECK(e2 < 1e-3);
  CHECK(e1 / e2 == Approx(16.0).margin(6.0));
}

TEST_CASE("1-D Delaunay end gluing") {
  DelaunayGlueControls c;
  SECTION("exact input is a fixed point") {
    auto r = glue_delaunay_1d(3, 0.5, delaunay_source(3, 0.5), c);
    CHECK(r.converged);
    CHECK(r.eps_prime == 0.5);
    CHECK(r.q == 0.0);
    for (std::size_t i = 0; i < r.inner.ha.size(); ++i) {
      CHECK(r.inner.ha[i] == 0.0);
      CHECK(r.inner.hb[i] == 0.0);
      if (r.inner.x[i] >= r.window_start && r.inner.x[i] <= r.window_end) CHECK(std::abs(r.inner.R[i] - 6.0) <= 1e-6);
    }
  }
  SECTION("perturbed end: obstruction removed, eps' converges along the end") {
    std::vector<double> shift;
    for (int i : {1, 2, 3}) {
      c.window = i;
      auto r = glue_delaunay_1d(3, 0.5, perturbed_delaunay_source(3, 0.5, 1e-2, 4.0), c);
      INFO(r.csv());
      REQUIRE(r.converged);
      CHECK(std::abs(r.q) <= 1e-8);
      CHECK(std::abs(r.inner.kernel_component_projected) <= 1e-10);
      CHECK(r.inner.support_certificate == 0.0);
      // R interpolates R(g) -> n(n-1) across the window
      const auto& in = r.inner;
      for (std::size_t j = 0; j < in.x.size(); ++j)
        if (in.psi[j] > 0.0) CHECK(std::abs(in.R[j] - in.R_chi[j]) <= 1e-8);
      shift.push_back(std::abs(r.eps_prime - 0.5));
    }
    CHECK(shift[1] < shift[0]);
    CHECK(shift[2] < shift[1]);
    CHECK(shift[0] < 1e-2);
  }
}
