#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "scglue/gluing.hpp"
#include "scglue/models.hpp"

using namespace scglue;
using Catch::Approx;

namespace {

MetricField perturb(const MetricField& g, double eps) {
  SymTensorField m = g.metric();
  auto p = sample(MetricSpec::bump(3, eps, {-1.2, 1.4, 0.9, 0.0}, 1.5, 7), g.grid()).metric();
  m += p;
  m -= sample(MetricSpec::euclidean(3), g.grid()).metric();
  return MetricField(std::move(m));
}

double active_inner(const ScalarField& a, const ScalarField& b, const WeightFields& w, const MetricField& g) {
  return weighted_inner(a, b, w.psi, g);
}

}  // namespace

TEST_CASE("cutoff profile") {
  auto g = Grid::annulus(3, 1.0, 4.0, 24, 2);
  auto chi = make_cutoff(g, 2.0, 3.0);
  CHECK(cutoff_profile(0.0) == 1.0);
  CHECK(cutoff_profile(1.0) == 0.0);
  CHECK(cutoff_profile(0.5) == Approx(0.5).epsilon(1e-15));
  double prev = 2.0;
  for (int k = 0; k <= 100; ++k) {
    const double v = cutoff_profile(-0.1 + 1.2 * k / 100.0);
    CHECK(v <= prev);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    prev = v;
  }
  for (std::size_t i = 0; i < g->size(); ++i) {
    if (g->radius(i) <= 2.0) CHECK(chi(i) == 1.0);
    if (g->radius(i) >= 3.0) CHECK(chi(i) == 0.0);
  }
  CHECK_THROWS_AS(make_cutoff(g, 3.0, 2.0), DomainError);
  CHECK_THROWS_AS(make_cutoff(g, 0.5, 2.0), DomainError);
}

TEST_CASE("blend") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto half = make_scalar(grid, [](const Point&) { return 0.5; });
  auto one = make_scalar(grid, [](const Point&) { return 1.0; });
  auto [gc, Rc] = blend(constant_metric(grid), constant_metric(grid, 4.0), half);
  for (auto i : grid->active_nodes()) {
    CHECK(gc(i, 0, 0) == 2.5);
    CHECK(gc(i, 0, 1) == 0.0);
    CHECK(Rc(i) == 0.0);
  }
  auto g = sample(MetricSpec::bump(3, 0.2, {1.5, 0.8, -0.6, 0.0}, 2.0, 3), grid);
  auto gb = perturb(g, 0.05);
  const auto Rg = scalar_curvature(g), Rb = scalar_curvature(gb);
  auto [g1, R1] = blend(g, gb, one);
  auto [g2, R2] = blend(g, g, make_cutoff(grid, 2.0, 3.0));
  auto chi = make_cutoff(grid, 2.0, 3.0);
  auto [g3, R3] = blend(g, gb, chi);
  for (auto i : grid->active_nodes()) {
    CHECK(g1(i, 1, 2) == g(i, 1, 2));
    CHECK(R1(i) == Rg(i));
    CHECK(g2(i, 0, 2) == g(i, 0, 2));
    CHECK(R2(i) == Rg(i));
    CHECK(R3(i) >= std::min(Rg(i), Rb(i)) - 1e-15);
    CHECK(R3(i) <= std::max(Rg(i), Rb(i)) + 1e-15);
    if (chi(i) == 0.0) CHECK(R3(i) == Rb(i));
  }
}

TEST_CASE("kernel basis and projection") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 24, 2);
  auto delta = constant_metric(grid);
  auto w = eval_weights(grid, 3, WeightSpec::defaults(3));
  auto basis = kernel_basis(KernelModel::euclidean, grid, w.psi, delta);
  REQUIRE(basis.size() == 4);
  for (std::size_t a = 0; a < 4; ++a)
    for (std::size_t b = 0; b < 4; ++b)
      CHECK(std::abs(active_inner(basis[a], basis[b], w, delta) - (a == b ? 1.0 : 0.0)) <= 1e-10);

  auto f = make_scalar(grid, [](const Point& p) { return std::sin(p[0]) * p[1] + p[2] * p[2]; });
  auto pf = project_Kperp(f, basis, w.psi, delta);
  auto ppf = project_Kperp(pf, basis, w.psi, delta);
  const double nf = std::sqrt(active_inner(pf, pf, w, delta));
  for (const auto& e : basis) CHECK(std::abs(active_inner(e, pf, w, delta)) <= 1e-10 * nf);
  ScalarField d = ppf;
  d -= pf;
  CHECK(std::sqrt(active_inner(d, d, w, delta)) <= 1e-12 * nf);

  auto in_span = make_scalar(grid, [](const Point& p) { return 2.0 - p[0] + 0.5 * p[2]; });
  auto z = project_Kperp(in_span, basis, w.psi, delta);
  CHECK(std::sqrt(active_inner(z, z, w, delta)) <= 1e-10 * std::sqrt(active_inner(in_span, in_span, w, delta)));

  auto same = project_Kperp(f, {}, w.psi, delta);
  for (auto i : grid->active_nodes()) CHECK(same(i) == f(i));
  CHECK(kernel_basis(KernelModel::custom, grid, w.psi, delta).empty());

  auto g2 = Grid::annulus(2, 1.0, 4.0, 32, 2);
  auto w2 = eval_weights(g2, 2, WeightSpec::defaults(2));
  CHECK(kernel_basis(KernelModel::euclidean, g2, w2.psi, constant_metric(g2)).size() == 3);

  auto x = make_scalar(grid, [](const Point& p) { return p[0]; });
  CHECK_THROWS_AS(kernel_basis(KernelModel::custom, grid, w.psi, delta, {x, x}), SolverError);
  CHECK_THROWS_AS(kernel_basis(KernelModel::delaunay, grid, w.psi, delta), DomainError);
}

TEST_CASE("nondegeneracy check separates delta from a bumped metric") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto w = eval_weights(grid, 3, WeightSpec::defaults(3));
  auto flat = nondegeneracy_check(constant_metric(grid), w);
  auto bumped = nondegeneracy_check(sample(MetricSpec::bump(3, 0.2, {1.5, 0.8, -0.6, 0.0}, 2.0, 3), grid), w);
  CHECK_FALSE(flat.nondegenerate);
  CHECK(bumped.nondegenerate);
  CHECK(bumped.min_eig > 1e6 * std::max(flat.max_eig, 1e-30));
}

TEST_CASE("projected solves") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto g = sample(MetricSpec::bump(3, 0.2, {1.5, 0.8, -0.6, 0.0}, 2.0, 3), grid);
  auto w = eval_weights(grid, 3, WeightSpec::defaults(3));
  auto basis = kernel_basis(KernelModel::euclidean, grid, w.psi, g);
  CompositeOperator L(g, g, w);
  const LinearControls ctl{4000, 1e-10};

  auto zero = make_scalar(grid, [](const Point&) { return 0.0; });
  auto u0 = solve_projected(L, zero, basis, w, ctl);
  CHECK(u0.u.max_abs_active() == 0.0);

  auto v = make_scalar(grid, [](const Point& p) { return std::cos(p[0]) * std::exp(-0.2 * p[1] * p[1]) + 0.3 * p[2]; });
  for (std::size_t i = 0; i < grid->size(); ++i)
    if (!grid->is_active(i)) v(i) = 0.0;
  auto pv = project_Kperp(v, basis, w.psi, g);
  auto rhs = project_Kperp(L.apply(pv), basis, w.psi, g);
  DenseKperpFactor factor(L, basis, w);
  auto sol = solve_projected(L, rhs, basis, w, ctl, &factor);
  CHECK(sol.converged);
  ScalarField d = sol.u;
  d -= pv;
  const double rel = std::sqrt(weighted_inner(d, d, w.psi, g) / weighted_inner(pv, pv, w.psi, g));
  INFO("relative error " << rel << " after " << sol.iterations);
  CHECK(rel < 1e-5);

  // The unpreconditioned iteration reports its history when it stalls.
  try {
    solve_projected(L, rhs, basis, w, LinearControls{5, 1e-12});
    FAIL("expected a diagnostic");
  } catch (const LinearSolveError& e) {
    CHECK(e.history.size() == 6);
  }
  CHECK_THROWS_AS(solve_projected(L, L.apply(v), basis, w, ctl), SolverError);
}

TEST_CASE("glue: identical inputs") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto g = sample(MetricSpec::bump(3, 0.2, {1.5, 0.8, -0.6, 0.0}, 2.0, 3), grid);
  GlueProblem P{g, g, {2.0, 3.0, {}}, WeightSpec::defaults(3), KernelModel::euclidean, {}, {}, nullptr};
  auto rep = glue(P);
  CHECK(rep.converged);
  CHECK(rep.iterations == 0);
  CHECK(rep.h_max == 0.0);
  CHECK(rep.trace.at(0).weighted == 0.0);
  CHECK(rep.factorizations == 0);

  GlueProblem bad = P;
  bad.cutoff = {3.0, 2.0, {}};
  CHECK_THROWS_AS(glue(bad), DomainError);
  bad.cutoff = {0.5, 2.0, {}};
  CHECK_THROWS_AS(glue(bad), DomainError);
}

TEST_CASE("glue: Newton contraction, support and scaling") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto g = sample(MetricSpec::bump(3, 0.2, {1.5, 0.8, -0.6, 0.0}, 2.0, 3), grid);
  std::shared_ptr<const DenseKperpFactor> pre;
  std::vector<int> iters;
  std::vector<double> ratio;
  for (double eps : {1e-2, 5e-3}) {
    GlueProblem P{g, perturb(g, eps), {2.0, 3.0, {}}, WeightSpec::defaults(3), KernelModel::custom, {}, {}, pre};
    auto rep = glue(P);
    pre = rep.preconditioner;
    INFO("eps " << eps << " " << rep.message);
    REQUIRE(rep.converged);
    CHECK(rep.trace.back().weighted <= 1e-8);
    CHECK(rep.support_certificate == 0.0);
    for (std::size_t k = 1; k + 1 < rep.trace.size(); ++k) CHECK(rep.trace[k].weighted / rep.trace[k - 1].weighted < 0.1);
    iters.push_back(rep.iterations);
    ratio.push_back(rep.h_max / eps);
  }
  CHECK(iters[1] <= iters[0]);
  CHECK(ratio[0] / ratio[1] < 2.0);
  CHECK(ratio[1] / ratio[0] < 2.0);
}

TEST_CASE("glue: euclidean kernel, Picard and frozen-adjoint variants") {
  auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  auto delta = constant_metric(grid);
  auto gb = perturb(delta, 1e-2);
  std::shared_ptr<const DenseKperpFactor> pre;
  std::vector<std::vector<double>> qs;
  for (int mode = 0; mode < 3; ++mode) {
    GlueProblem P{delta, gb, {2.0, 3.0, {}}, WeightSpec::defaults(3), KernelModel::euclidean, {}, {}, pre};
    P.controls.newton_max = 20;
    if (mode == 1) P.controls.mode = GlueMode::picard;
    if (mode == 2) P.controls.use_frozen_adjoint = true;
    auto rep = glue(P);
    pre = rep.preconditioner;
    INFO("mode " << mode << " " << rep.message);
    CHECK(rep.converged);
    CHECK(rep.trace.back().weighted <= 1e-8);
    CHECK(rep.support_certificate == 0.0);
    qs.push_back(rep.q);
  }
  double qn = 0.0;
  for (double q : qs[0]) qn = std::max(qn, std::abs(q));
  CHECK(qn > 1e-7);
  for (int mode = 1; mode < 3; ++mode)
    for (std::size_t i = 0; i < qs[0].size(); ++i) CHECK(qs[mode][i] == Approx(qs[0][i]).epsilon(1e-3).margin(1e-9));
}
