#pragma once
// Asymptotic invariants of AE model metrics: V = g - (Tr_delta g) delta, mass
// and center of mass at finite radius, parity splits, the expansion defect
// Q = R sqrt|g| - d^j d^i V_ij, and Richardson limits over radius ladders.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "scglue/curvature.hpp"
#include "scglue/io.hpp"
#include "scglue/models.hpp"
#include "scglue/quadrature.hpp"

namespace scglue {

inline SmallMat<double> v_tensor(const MetricSpec& spec, const Point& x) {
  auto g = spec.metric_at(x);
  double tr = 0.0;
  for (int i = 0; i < spec.n; ++i) tr += g(i, i);
  for (int i = 0; i < spec.n; ++i) g(i, i) -= tr;
  return g;
}

/// D_j = d^i V_ij = d_i g_ij - d_j Tr g.
inline Point div_v(const MetricSpec& spec, const Point& x) {
  const int n = spec.n;
  Vec<double> xv{};
  for (int a = 0; a < n; ++a) xv[a] = x[a];
  Mat<double> g;
  std::array<Mat<double>, kMaxDim> dg;
  spec.metric_and_gradient(xv, g, dg);
  Point D{};
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += dg[i][i * kMaxDim + j] - dg[j][i * kMaxDim + i];
    D[j] = s;
  }
  return D;
}

/// d^j d^i V_ij = d_i d_j g_ij - lap_0 Tr g, from exact second derivatives.
inline double div_div_v(const MetricSpec& spec, const Point& x) {
  const int n = spec.n;
  double s = 0.0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      Vec<Dual<Dual<double>>> xd{};
      for (int c = 0; c < n; ++c)
        xd[c] = Dual<Dual<double>>(Dual<double>(x[c], c == b ? 1.0 : 0.0), Dual<double>(c == a ? 1.0 : 0.0, 0.0));
      const auto g = spec.metric(xd);
      // d_a d_b of every component
      s += g[a * kMaxDim + b].d.d;
      if (a == b)
        for (int i = 0; i < n; ++i) s -= g[i * kMaxDim + i].d.d;
    }
  return s;
}

inline double omega(int n) { return unit_sphere_area(n); }

inline double mass_at_radius(const MetricSpec& spec, double lambda, int order = 24) {
  const int n = spec.n;
  const double flux = sphere_quadrature(
      n, lambda,
      [&](const Point& x, const Point& nu) {
        const Point D = div_v(spec, x);
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += D[j] * nu[j];
        return s;
      },
      order);
  return flux / (4.0 * omega(n));
}

inline std::vector<double> com_at_radius(const MetricSpec& spec, double lambda, int order = 24) {
  const int n = spec.n;
  std::vector<double> C(n);
  for (int l = 0; l < n; ++l) {
    const double flux = sphere_quadrature(
        n, lambda,
        [&](const Point& x, const Point& nu) {
          const Point D = div_v(spec, x);
          const auto V = v_tensor(spec, x);
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += (x[l] * D[j] - V(l, j)) * nu[j];
          return s;
        },
        order);
    C[l] = flux / (4.0 * omega(n));
  }
  return C;
}

/// Volume integral of f over the annulus lambda <= |x| <= nu.
template <class F>
double annulus_integral(int n, double lambda, double nu, F&& f, int radial_order = 24, int sphere_order = 24) {
  const GaussRule rule = gauss_legendre(radial_order);
  std::vector<double> terms;
  for (int k = 0; k < radial_order; ++k) {
    const double r = 0.5 * (nu + lambda) + 0.5 * (nu - lambda) * rule.nodes[k];
    terms.push_back(0.5 * (nu - lambda) * rule.weights[k] *
                    sphere_quadrature(n, r, [&](const Point& x, const Point&) { return f(x); }, sphere_order));
  }
  return pairwise_sum(terms);
}

/// (1/(4 omega)) int_{A_{lambda,nu}} R dmu_g - [m(nu) - m(lambda)].
inline double mass_drift_defect(const MetricSpec& spec, double lambda, double nu, int order = 24) {
  const int n = spec.n;
  const double vol = annulus_integral(
      n, lambda, nu,
      [&](const Point& x) {
        const auto g = spec.metric_at(x);
        SmallMat<double> inv;
        double det = 0.0;
        spd_inverse(g, inv, det);
        return spec.scalar_curvature(x) * std::sqrt(det);
      },
      order, order);
  return vol / (4.0 * omega(n)) - (mass_at_radius(spec, nu, order) - mass_at_radius(spec, lambda, order));
}

// ---------------------------------------------------------------------------
// Parity

template <class F>
auto parity_split(F f) {
  auto even = [f](const Point& x) {
    Point m{};
    for (int a = 0; a < kMaxDim; ++a) m[a] = -x[a];
    return 0.5 * (f(x) + f(m));
  };
  auto odd = [f](const Point& x) {
    Point m{};
    for (int a = 0; a < kMaxDim; ++a) m[a] = -x[a];
    return 0.5 * (f(x) - f(m));
  };
  return std::pair{even, odd};
}

/// Even and odd parts of a field on a grid symmetric under x -> -x. The odd
/// part is f - even, so the sum reconstructs f exactly.
inline std::pair<ScalarField, ScalarField> parity_split(const ScalarField& f) {
  const Grid& g = f.g();
  for (int a = 0; a < g.dim(); ++a)
    if (std::abs(g.coord(0, a) + g.coord(g.size() - 1, a)) > 1e-12 * g.spacing())
      throw DomainError("parity_split: grid is not symmetric under x -> -x");
  ScalarField even(f.grid()), odd(f.grid());
  for (std::size_t i = 0; i < f.size(); ++i) {
    even(i) = 0.5 * (f(i) + f(g.mirror(i)));
    odd(i) = f(i) - even(i);
  }
  return {even, odd};
}

// ---------------------------------------------------------------------------
// Expansion defect and rescaling checks

/// Q = R sqrt|g| - d^j d^i V_ij at the active nodes (exact derivatives).
inline ScalarField expansion_defect(const MetricSpec& spec, const GridPtr& grid) {
  if (grid->dim() != spec.n) throw DomainError("expansion_defect: dimension mismatch");
  ScalarField Q(grid);
  for (auto i : grid->active_nodes()) {
    const Point x = grid->point(i);
    const auto g = spec.metric_at(x);
    SmallMat<double> inv;
    double det = 0.0;
    if (!spd_inverse(g, inv, det)) throw DomainError("expansion_defect: metric not positive-definite");
    Q(i) = spec.scalar_curvature(x) * std::sqrt(det) - div_div_v(spec, x);
  }
  return Q;
}

/// max over active nodes of |R_grid(g_lambda)(x) - lambda^2 R(g)(lambda x)|, the
/// right side from exact derivatives; and the same for R sqrt|g| against
/// lambda^2 (R sqrt|g|)(lambda x), the density form of the measure identity.
struct RescaleCheck {
  double curvature = 0.0;
  double density = 0.0;
  double scale = 0.0;  ///< max |lambda^2 R(g)(lambda x)| for relative reading
  double density_scale = 0.0;
};

inline RescaleCheck rescale_curvature_check(const MetricSpec& spec, double lambda, const GridPtr& grid) {
  const auto gl = sample(rescale(spec, lambda), grid);
  const auto R = scalar_curvature(gl);
  RescaleCheck out;
  for (auto i : grid->active_nodes()) {
    Point y = grid->point(i);
    for (int a = 0; a < spec.n; ++a) y[a] *= lambda;
    const double ref = lambda * lambda * spec.scalar_curvature(y);
    const auto g = spec.metric_at(y);
    SmallMat<double> inv;
    double det = 0.0;
    spd_inverse(g, inv, det);
    out.curvature = std::max(out.curvature, std::abs(R(i) - ref));
    out.density = std::max(out.density, std::abs(R(i) * gl.sqrt_det()(i) - ref * std::sqrt(det)));
    out.scale = std::max(out.scale, std::abs(ref));
    out.density_scale = std::max(out.density_scale, std::abs(ref * std::sqrt(det)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Radius ladders

/// Richardson table for samples f(lambda_k) on a geometric ladder whose error
/// expands in powers lambda^{-p}, lambda^{-p-1}, ... Returns the most
/// extrapolated value and the size of the last correction.
inline std::pair<double, double> richardson(const std::vector<double>& lambdas, const std::vector<double>& values,
                                            double leading_order) {
  const std::size_t m = values.size();
  if (lambdas.size() != m || m == 0) throw DomainError("richardson: bad ladder");
  std::vector<std::vector<double>> T(m);
  for (std::size_t i = 0; i < m; ++i) {
    T[i].push_back(values[i]);
    for (std::size_t k = 1; k <= i; ++k) {
      const double t = std::pow(lambdas[i] / lambdas[i - 1], leading_order + static_cast<double>(k - 1));
      T[i].push_back((t * T[i][k - 1] - T[i - 1][k - 1]) / (t - 1.0));
    }
  }
  const auto& last = T[m - 1];
  return {last.back(), m > 1 ? std::abs(last.back() - last[last.size() - 2]) : 0.0};
}

struct LadderRow {
  double lambda = 0.0;
  double mass = 0.0;
  std::vector<double> com;
};

struct AsymptoticReport {
  int n = 3;
  double omega = 0.0;
  std::vector<LadderRow> rows;
  std::vector<double> mass_differences;  ///< m(lambda_{k+1}) - m(lambda_k)
  double mass_limit = 0.0;
  double mass_limit_correction = 0.0;
  std::vector<double> com_limit;

  std::string csv() const {
    std::vector<std::string> head{"lambda", "m"};
    for (int l = 1; l <= n; ++l) head.push_back("C" + std::to_string(l));
    CsvWriter w(head);
    for (const auto& r : rows) {
      std::vector<double> cells{r.lambda, r.mass};
      cells.insert(cells.end(), r.com.begin(), r.com.end());
      w.row(cells);
    }
    return w.str();
  }
};

inline AsymptoticReport asymptotic_report(const MetricSpec& spec, const std::vector<double>& lambdas, int order = 24,
                                          double leading_order = 1.0) {
  AsymptoticReport rep;
  rep.n = spec.n;
  rep.omega = omega(spec.n);
  std::vector<double> ms;
  std::vector<std::vector<double>> cs(spec.n);
  for (double lam : lambdas) {
    LadderRow row{lam, mass_at_radius(spec, lam, order), com_at_radius(spec, lam, order)};
    ms.push_back(row.mass);
    for (int l = 0; l < spec.n; ++l) cs[l].push_back(row.com[l]);
    rep.rows.push_back(std::move(row));
  }
  for (std::size_t k = 1; k < ms.size(); ++k) rep.mass_differences.push_back(ms[k] - ms[k - 1]);
  std::tie(rep.mass_limit, rep.mass_limit_correction) = richardson(lambdas, ms, leading_order);
  for (int l = 0; l < spec.n; ++l) rep.com_limit.push_back(richardson(lambdas, cs[l], leading_order).first);
  return rep;
}

}  // namespace scglue
