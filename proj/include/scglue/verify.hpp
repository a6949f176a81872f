#pragma once
// Invariant suites behind `scglue verify`: each check is a measured value, a
// relation and a bound.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "scglue/asymptotics.hpp"
#include "scglue/curvature.hpp"
#include "scglue/delaunay.hpp"
#include "scglue/gluing.hpp"
#include "scglue/io.hpp"
#include "scglue/models.hpp"
#include "scglue/operators.hpp"
#include "scglue/weights.hpp"

namespace scglue {

struct Check {
  std::string id;
  double measured = 0.0;
  std::string relation = "<=";
  double bound = 0.0;

  bool pass() const {
    if (!std::isfinite(measured)) return false;
    return relation == "<=" ? measured <= bound : measured >= bound;
  }
};

struct VerifyReport {
  std::vector<Check> checks;

  const Check* first_failure() const {
    for (const auto& c : checks)
      if (!c.pass()) return &c;
    return nullptr;
  }
  bool pass() const { return first_failure() == nullptr; }

  std::string csv() const {
    CsvWriter w({"check", "measured", "relation", "bound", "pass"});
    for (const auto& c : checks)
      w.row(std::vector<std::string>{c.id, format_double(c.measured), c.relation, format_double(c.bound),
                                     c.pass() ? "1" : "0"});
    return w.str();
  }
};

struct VerifyOptions {
  std::uint32_t seed = 1;
  double linearization_sign = 1.0;  ///< -1 reproduces a sign-flipped linearization
};

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> s{"curvature", "operators", "weights", "gluing", "asymptotics", "delaunay"};
  return s;
}

namespace detail {

inline double poly_bump(const Point& p, const Point& c, double w) {
  double s = 0.0;
  for (int a = 0; a < 3; ++a) s += (p[a] - c[a]) * (p[a] - c[a]);
  s /= w * w;
  return s < 1.0 ? std::pow(1.0 - s, 8) : 0.0;
}

inline SymTensorField random_compact_tensor(const GridPtr& g, std::uint32_t seed, Point centre, double width) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  double c[6][4];
  for (auto& row : c)
    for (auto& v : row) v = U(rng);
  SymTensorField h(g);
  for (std::size_t i = 0; i < g->size(); ++i) {
    const auto p = g->point(i);
    const double b = poly_bump(p, centre, width);
    if (b == 0.0) continue;
    for (int k = 0; k < 6; ++k)
      h(i, k) = b * (c[k][0] + c[k][1] * p[0] + c[k][2] * p[1] * p[1] + c[k][3] * std::sin(p[2]));
  }
  return h;
}

inline ScalarField random_compact_scalar(const GridPtr& g, std::uint32_t seed, Point centre, double width) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const double a = U(rng), b = U(rng), c = U(rng);
  return make_scalar(g, [&](const Point& p) { return poly_bump(p, centre, width) * (a + b * p[0] + c * p[1] * p[2]); });
}

inline double schwarzschild_shell_R(int N) {
  const auto grid = Grid::annulus(3, 2.0, 3.0, N, 2);
  return scalar_curvature(sample(MetricSpec::schwarzschild(3, 1.0), grid)).max_abs_active();
}

inline double duality_at(int N, std::uint32_t seed) {
  const auto g = Grid::annulus(3, 0.05, 2.0, N, 2);
  SymTensorField m(g);
  for (std::size_t i = 0; i < g->size(); ++i) {
    const auto p = g->point(i);
    const double b = 0.2 * std::exp(-(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    m.at(i, 0, 0) = 1.0 + b;
    m.at(i, 1, 1) = 1.0 + 0.5 * b;
    m.at(i, 2, 2) = 1.0;
    m.at(i, 0, 1) = 0.3 * b;
  }
  const MetricField metric(m);
  return duality_defect(metric, random_compact_tensor(g, seed + 4, {0.2, -0.1, 0.1, 0.0}, 1.4),
                        random_compact_scalar(g, seed + 8, {-0.1, 0.2, 0.0, 0.0}, 1.4));
}

}  // namespace detail

inline std::vector<Check> verify_curvature(const VerifyOptions&) {
  std::vector<Check> out;
  const auto grid = Grid::annulus(3, 1.0, 4.0, 20, 2);
  out.push_back({"curvature.constant_metric_R", scalar_curvature(constant_metric(grid, 4.0)).max_abs_active(), "<=", 0.0});
  const auto conf = MetricSpec::conformal(3, 0.5, {0.2, 0.0, 0.0, 0.0}, 1.0);
  const auto conformal_error = [&](int N) {
    const auto g = sample(conf, Grid::annulus(3, 1.0, 3.0, N, 2));
    const auto exact = exact_scalar_curvature(conf, g.grid());
    const auto R = scalar_curvature(g);
    double err = 0.0, scale = 0.0;
    for (auto i : g.grid()->active_nodes()) {
      err = std::max(err, std::abs(R(i) - exact(i)));
      scale = std::max(scale, std::abs(exact(i)));
    }
    return err / scale;
  };
  const double c48 = conformal_error(48), c96 = conformal_error(96);
  out.push_back({"curvature.conformal_relative_error_N96", c96, "<=", 1e-3});
  out.push_back({"curvature.conformal_refinement_ratio", c48 / c96, ">=", 10.0});
  const double a = detail::schwarzschild_shell_R(56), b = detail::schwarzschild_shell_R(112);
  out.push_back({"curvature.schwarzschild_R_N112", b, "<=", 1e-3});
  out.push_back({"curvature.schwarzschild_refinement_ratio_deviation", std::abs(a / b - 16.0), "<=", 6.0});
  return out;
}

inline std::vector<Check> verify_operators(const VerifyOptions& opt) {
  std::vector<Check> out;
  {
    const auto g = Grid::annulus(3, 1.0, 4.0, 32, 2);
    const auto delta = constant_metric(g);
    double worst = 0.0;
    for (int k = -1; k < 3; ++k) {
      const auto u = make_scalar(g, [k](const Point& p) { return k < 0 ? 1.0 : p[k]; });
      worst = std::max(worst, apply_Pstar(delta, u).max_abs_active());
    }
    out.push_back({"operators.kernel_exactness", worst, "<=", 1e-13});
  }
  {
    const auto g = Grid::annulus(3, 1.0, 4.0, 24, 2);
    const auto metric = sample(MetricSpec::bump(3, 0.1, {1.5, 0.8, -0.6, 0.0}, 1.6, opt.seed), g);
    const auto h = detail::random_compact_tensor(g, opt.seed + 2, {-1.0, 1.5, 0.5, 0.0}, 1.8);
    const auto R0 = scalar_curvature(metric);
    auto Ph = apply_P(metric, h);
    Ph *= opt.linearization_sign;
    std::vector<double> defect;
    for (double t : {1e-2, 5e-3, 2.5e-3}) {
      SymTensorField gt = metric.metric();
      SymTensorField th = h;
      th *= t;
      gt += th;
      const auto Rt = scalar_curvature(MetricField(gt));
      double d = 0.0;
      for (auto i : g->active_nodes()) d = std::max(d, std::abs(Rt(i) - R0(i) - t * Ph(i)));
      defect.push_back(d);
    }
    out.push_back({"operators.linearization_ratio_1_deviation", std::abs(defect[0] / defect[1] - 4.0), "<=", 0.8});
    out.push_back({"operators.linearization_ratio_2_deviation", std::abs(defect[1] / defect[2] - 4.0), "<=", 0.8});
  }
  const double d16 = detail::duality_at(16, opt.seed), d32 = detail::duality_at(32, opt.seed);
  out.push_back({"operators.duality_order", std::log2(d16 / d32), ">=", 2.0});
  return out;
}

inline std::vector<Check> verify_weights(const VerifyOptions&) {
  std::vector<Check> out;
  const auto g = Grid::interval(0.0, 4.0, 401, 2);
  const auto spec = WeightSpec::defaults(3);
  const auto w = eval_weights(g, 3, spec);
  double min_psi = 0.0, below_cut = 0.0, nonfinite = 0.0, violations = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < g->size(); ++i) {
    if (!std::isfinite(w.psi(i)) || !std::isfinite(w.phi(i)) || !std::isfinite(w.varphi(i))) nonfinite += 1.0;
    min_psi = std::min({min_psi, w.psi(i), w.varphi(i)});
    if (w.x(i) < spec.x_cut) below_cut = std::max(below_cut, std::abs(w.psi(i)));
    const double x = g->coord(i, 0);
    if (x > 0.0 && x <= 2.0) {
      if (w.psi(i) < prev) violations += 1.0;
      prev = w.psi(i);
    }
  }
  out.push_back({"weights.nonfinite_values", nonfinite, "<=", 0.0});
  out.push_back({"weights.min_psi", min_psi, ">=", 0.0});
  out.push_back({"weights.psi_below_cut", below_cut, "<=", 0.0});
  out.push_back({"weights.monotonicity_violations", violations, "<=", 0.0});
  out.push_back({"weights.psi_at_1", std::abs(weights_at(1.0, 3, spec).psi - std::exp(-1.0)), "<=", 1e-15});
  return out;
}

inline std::vector<Check> verify_gluing(const VerifyOptions& opt) {
  std::vector<Check> out;
  const auto grid = Grid::annulus(3, 1.0, 4.0, 24, 2);
  const auto g = sample(MetricSpec::bump(3, 0.2, {1.5, 0.8, -0.6, 0.0}, 2.0, opt.seed + 2), grid);
  {
    GlueProblem P{g, g, {2.0, 3.0, {}}, WeightSpec::defaults(3), KernelModel::euclidean, {}, {}, nullptr};
    const auto rep = glue(P);
    out.push_back({"gluing.identical_iterations", static_cast<double>(rep.iterations), "<=", 0.0});
    out.push_back({"gluing.identical_residual", rep.trace.at(0).weighted, "<=", 0.0});
  }
  {
    const auto gbar = add_perturbation(g, MetricSpec::bump(3, 1e-2, {-1.2, 1.4, 0.9, 0.0}, 1.5, opt.seed + 6));
    GlueProblem P{g, gbar, {2.0, 3.0, {}}, WeightSpec::defaults(3), KernelModel::euclidean, {}, {}, nullptr};
    const auto rep = glue(P);
    out.push_back({"gluing.bump_converged", rep.converged ? 1.0 : 0.0, ">=", 1.0});
    out.push_back({"gluing.bump_iterations", static_cast<double>(rep.iterations), "<=", 10.0});
    out.push_back({"gluing.bump_weighted_residual", rep.trace.back().weighted, "<=", 1e-8});
    out.push_back({"gluing.bump_support_certificate", rep.support_certificate, "<=", 1e-14});
  }
  {
    const auto gp = sample(MetricSpec::conformal(3, 0.5, {}, 1.0), grid);
    const auto gq = sample(MetricSpec::conformal(3, 0.5, {0.0, 0.0, 0.0, 0.0}, 1.05), grid);
    GlueProblem P{gp, gq, {2.0, 3.0, {}}, WeightSpec::defaults(3), KernelModel::euclidean, {}, {}, nullptr};
    const auto rep = glue(P);
    out.push_back({"gluing.positive_inputs_min_R", rep.min_R_inputs, ">=", 0.0});
    out.push_back({"gluing.positive_glued_min_R", rep.min_R, ">=", -1e-6});
  }
  return out;
}

inline std::vector<Check> verify_asymptotics(const VerifyOptions&) {
  std::vector<Check> out;
  const auto ladder = asymptotic_report(MetricSpec::schwarzschild(3, 1.0), {25.0, 50.0, 100.0}, 24);
  out.push_back({"asymptotics.schwarzschild_mass_100", std::abs(ladder.mass_limit - 1.0), "<=", 1e-3});
  out.push_back({"asymptotics.euclidean_mass", std::abs(mass_at_radius(MetricSpec::euclidean(3), 100.0)), "<=", 0.0});
  const auto C = com_at_radius(MetricSpec::schwarzschild(3, 1.0, {0.1, 0.0, 0.0, 0.0}), 200.0);
  out.push_back({"asymptotics.off_center_C1", std::abs(C[0] - 0.1), "<=", 1e-2});
  double centered = 0.0;
  for (const auto& s : {MetricSpec::schwarzschild(3, 1.0), MetricSpec::conformal(3, 0.5, {}, 1.0)})
    for (double v : com_at_radius(s, 50.0)) centered = std::max(centered, std::abs(v));
  out.push_back({"asymptotics.centered_com", centered, "<=", 1e-10});

  const double lam = 7.0;
  const Point c{0.3, -0.2, 0.1, 0.0};
  const auto a = rescale(MetricSpec::schwarzschild(3, 1.0, c), lam);
  Point cl{};
  for (int k = 0; k < 3; ++k) cl[k] = c[k] / lam;
  const auto b = MetricSpec::schwarzschild(3, 1.0 / lam, cl);
  double pw = 0.0;
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> U(-3.0, 3.0);
  for (int k = 0; k < 200; ++k) {
    const Point x{U(rng), U(rng), U(rng), 0.0};
    const auto ga = a.metric_at(x), gb = b.metric_at(x);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) pw = std::max(pw, std::abs(ga(i, j) - gb(i, j)) / std::abs(gb(i, j) == 0.0 ? 1.0 : gb(i, j)));
  }
  out.push_back({"asymptotics.rescaled_schwarzschild_pointwise", pw, "<=", 1e-12});
  const auto rc = rescale_curvature_check(MetricSpec::conformal(3, 0.8, {0.3, 0.0, 0.0, 0.0}, 2.0), 1.7,
                                          Grid::annulus(3, 1.0, 2.0, 40, 2));
  out.push_back({"asymptotics.rescaled_curvature_relative", rc.curvature / rc.scale, "<=", 1e-3});
  return out;
}

inline std::vector<Check> verify_delaunay(const VerifyOptions&) {
  std::vector<Check> out;
  for (double eps : {0.3, 0.5, 0.7}) {
    const std::string tag = format_double(eps);
    const auto T = period(3, eps).T;
    const auto o = ode_solve(3, eps, 10.0 * T, 1e-13, 4001);
    out.push_back({"delaunay.energy_drift_eps_" + tag, o.energy_drift, "<=", 1e-10});
    out.push_back({"delaunay.return_error_eps_" + tag, return_error(o), "<=", 1e-8});
    const auto af = arclength_form(ode_solve(3, eps, 1.0), 1024);
    const auto geo = warped_geometry(af.f, af.spacing(), 3, true);
    double worst = 0.0;
    for (double r : geo.R()) worst = std::max(worst, std::abs(r - 6.0));
    out.push_back({"delaunay.reduced_R_eps_" + tag, worst, "<=", 1e-6});
  }
  const double two_pi = 2.0 * std::numbers::pi;
  out.push_back({"delaunay.period_near_cylinder", std::abs(period(3, 0.99 * cylinder_value(3)).T - two_pi) / two_pi, "<=",
                 1e-2});
  double stat = 0.0;
  for (double u : ode_solve(3, cylinder_value(3), 20.0).u) stat = std::max(stat, std::abs(u - cylinder_value(3)));
  out.push_back({"delaunay.cylinder_stationary", stat, "<=", 1e-10});

  const auto spec = MetricSpec::warped(3, 0.1, 1.0);
  const double e1 = warped_backend_discrepancy(spec, Grid::annulus(3, 1.0, 3.0, 24, 2), 1.5, 2.5);
  const double e2 = warped_backend_discrepancy(spec, Grid::annulus(3, 1.0, 3.0, 48, 2), 1.5, 2.5);
  out.push_back({"delaunay.two_backend_discrepancy", e2, "<=", 1e-3});
  out.push_back({"delaunay.two_backend_ratio_deviation", std::abs(e1 / e2 - 16.0), "<=", 6.0});

  DelaunayGlueControls ctl;
  std::vector<double> shift;
  double qmax = 0.0;
  for (int i : {1, 2, 3}) {
    ctl.window = i;
    const auto r = glue_delaunay_1d(3, 0.5, perturbed_delaunay_source(3, 0.5, 1e-2, 4.0), ctl);
    qmax = std::max(qmax, r.converged ? std::abs(r.q) : INFINITY);
    shift.push_back(std::abs(r.eps_prime - 0.5));
  }
  out.push_back({"delaunay.end_glue_q", qmax, "<=", 1e-8});
  out.push_back({"delaunay.end_glue_shift_increases", static_cast<double>((shift[1] >= shift[0]) + (shift[2] >= shift[1])),
                 "<=", 0.0});
  return out;
}

inline VerifyReport run_verify(const std::string& suite, const VerifyOptions& opt = {}) {
  const auto& all = verify_suites();
  if (suite != "all" && std::find(all.begin(), all.end(), suite) == all.end())
    throw ConfigError("verify: unknown suite '" + suite + "'");
  VerifyReport rep;
  for (const auto& s : all) {
    if (suite != "all" && suite != s) continue;
    std::vector<Check> c;
    if (s == "curvature") c = verify_curvature(opt);
    else if (s == "operators") c = verify_operators(opt);
    else if (s == "weights") c = verify_weights(opt);
    else if (s == "gluing") c = verify_gluing(opt);
    else if (s == "asymptotics") c = verify_asymptotics(opt);
    else c = verify_delaunay(opt);
    rep.checks.insert(rep.checks.end(), c.begin(), c.end());
  }
  return rep;
}

}  // namespace scglue
