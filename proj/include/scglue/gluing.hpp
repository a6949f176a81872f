#pragma once
// Cutoffs, blending, kernel handling, projected solves and the Newton
// iteration for pi_{K-perp} psi^-2 (R(g_chi + h) - R_chi) = 0 with
// h = psi^2 phi^4 P* u.

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scglue/operators.hpp"

namespace scglue {

// ---------------------------------------------------------------------------
// Cutoff and blend

inline double cutoff_profile(double t) {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  const double b0 = std::exp(-1.0 / t), b1 = std::exp(-1.0 / (1.0 - t));
  return b1 / (b0 + b1);
}

inline ScalarField make_cutoff(const GridPtr& grid, double r1, double r2) {
  if (!(r1 < r2)) throw DomainError("cutoff: need r1 < r2");
  if (!(r1 > grid->inner() && r2 < grid->outer())) throw DomainError("cutoff: radii must lie inside the annulus");
  ScalarField chi(grid);
  for (std::size_t i = 0; i < grid->size(); ++i) chi(i) = cutoff_profile((grid->radial(i) - r1) / (r2 - r1));
  return chi;
}

struct Blend {
  MetricField g_chi;
  ScalarField R_chi;
};

/// g_chi = chi g + (1 - chi) gbar; R_chi blends the computed curvatures with
/// chi_R (defaults to chi).
inline Blend blend(const MetricField& g, const MetricField& gbar, const ScalarField& chi,
                   const ScalarField* chi_R = nullptr) {
  g.metric().check_same_grid(gbar.metric());
  g.metric().check_same_grid(chi);
  const ScalarField& cR = chi_R ? *chi_R : chi;
  SymTensorField m(g.grid());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (int c = 0; c < m.components(); ++c) {
      const double a = g.metric()(i, c), b = gbar.metric()(i, c);
      m(i, c) = (chi(i) == 1.0 || a == b) ? a : (chi(i) == 0.0 ? b : chi(i) * a + (1.0 - chi(i)) * b);
    }
  const auto Rg = scalar_curvature(g);
  const auto Rb = scalar_curvature(gbar);
  ScalarField R(g.grid());
  for (std::size_t i = 0; i < R.size(); ++i)
    R(i) = (cR(i) == 1.0 || Rg(i) == Rb(i)) ? Rg(i) : (cR(i) == 0.0 ? Rb(i) : cR(i) * Rg(i) + (1.0 - cR(i)) * Rb(i));
  return {MetricField(std::move(m)), std::move(R)};
}

// ---------------------------------------------------------------------------
// Kernel

enum class KernelModel { euclidean, delaunay, custom };

inline KernelModel kernel_model_from_string(const std::string& s) {
  if (s == "euclidean") return KernelModel::euclidean;
  if (s == "delaunay") return KernelModel::delaunay;
  if (s == "custom" || s == "none") return KernelModel::custom;
  throw ConfigError("unknown kernel model '" + s + "'");
}

/// Modified Gram-Schmidt in L^2_psi(g). Throws if the raw family has Gram
/// condition number above 1e8.
inline std::vector<ScalarField> orthonormalize(std::vector<ScalarField> fields, const ScalarField& psi,
                                               const MetricField& g) {
  const std::size_t k = fields.size();
  if (k == 0) return fields;
  Eigen::MatrixXd G(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) G(a, b) = G(b, a) = weighted_inner(fields[a], fields[b], psi, g);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e8)
    throw SolverError("kernel basis is rank deficient (Gram condition " + std::to_string(hi / std::max(lo, 0.0)) + ")");
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      const double c = weighted_inner(fields[a], fields[b], psi, g);
      ScalarField t = fields[b];
      t *= c;
      fields[a] -= t;
    }
    fields[a] *= 1.0 / std::sqrt(weighted_inner(fields[a], fields[a], psi, g));
  }
  return fields;
}

/// Raw kernel families. Euclidean gives {1, x^1, ..., x^n}; delaunay and
/// custom take the supplied fields (the delaunay module supplies its static
/// potential).
inline std::vector<ScalarField> raw_kernel(KernelModel model, const GridPtr& grid,
                                           const std::vector<ScalarField>& supplied = {}) {
  std::vector<ScalarField> out;
  switch (model) {
    case KernelModel::euclidean:
      out.push_back(make_scalar(grid, [](const Point&) { return 1.0; }));
      for (int a = 0; a < grid->dim(); ++a) out.push_back(make_scalar(grid, [a](const Point& p) { return p[a]; }));
      break;
    case KernelModel::delaunay:
      if (supplied.size() != 1) throw DomainError("kernel: delaunay model expects exactly the static potential");
      out = supplied;
      break;
    case KernelModel::custom: out = supplied; break;
  }
  for (const auto& f : out) f.check_same_grid(make_scalar(grid, [](const Point&) { return 0.0; }));
  return out;
}

inline std::vector<ScalarField> kernel_basis(KernelModel model, const GridPtr& grid, const ScalarField& psi,
                                             const MetricField& g, const std::vector<ScalarField>& supplied = {}) {
  return orthonormalize(raw_kernel(model, grid, supplied), psi, g);
}

inline std::vector<double> kernel_components(const ScalarField& f, const std::vector<ScalarField>& basis,
                                             const ScalarField& psi, const MetricField& g) {
  std::vector<double> q;
  for (const auto& e : basis) q.push_back(weighted_inner(e, f, psi, g));
  return q;
}

/// f - sum <f, e_i> e_i, zero outside the active nodes. Two passes of
/// Gram-Schmidt keep the output orthogonal at round-off level.
inline ScalarField project_Kperp(const ScalarField& f, const std::vector<ScalarField>& basis, const ScalarField& psi,
                                 const MetricField& g) {
  ScalarField out(f.grid());
  for (auto i : f.g().active_nodes()) out(i) = f(i);
  for (int pass = 0; pass < 2 && !basis.empty(); ++pass)
    for (const auto& e : basis) {
      const double c = weighted_inner(e, out, psi, g);
      for (auto i : f.g().active_nodes()) out(i) -= c * e(i);
    }
  return out;
}

/// Smallest and largest eigenvalue of the Gram matrix of psi phi^2 P*_g applied
/// to the L^2_psi-normalized probes {1, x^1, ..., x^n}.
struct NondegeneracyReport {
  double min_eig = 0.0, max_eig = 0.0;
  bool nondegenerate = false;
};

inline NondegeneracyReport nondegeneracy_check(const MetricField& g, const WeightFields& w,
                                               double threshold = 1e-10) {
  const auto& grid = g.grid();
  auto probes = kernel_basis(KernelModel::euclidean, grid, w.psi, g);
  std::vector<SymTensorField> images;
  for (const auto& p : probes) images.push_back(apply_Pstar(g, p));
  const std::size_t k = probes.size();
  const auto nodes = grid->active_nodes();
  const int n = grid->dim();
  Eigen::MatrixXd G(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) {
      std::vector<double> terms(nodes.size());
      for (std::size_t m = 0; m < nodes.size(); ++m) {
        const auto i = nodes[m];
        double s = 0.0;
        for (int p = 0; p < n; ++p)
          for (int q = 0; q < n; ++q)
            for (int r = 0; r < n; ++r)
              for (int t = 0; t < n; ++t)
                s += g.inv(i, p, r) * g.inv(i, q, t) * images[a].at(i, p, q) * images[b].at(i, r, t);
        const double wgt = w.psi(i) * w.psi(i) * std::pow(w.phi(i), 2);
        terms[m] = s * wgt * g.sqrt_det()(i);
      }
      G(a, b) = G(b, a) = pairwise_sum(terms) * grid->cell_volume();
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(G, Eigen::EigenvaluesOnly);
  NondegeneracyReport r;
  r.min_eig = es.eigenvalues().minCoeff();
  r.max_eig = es.eigenvalues().maxCoeff();
  r.nondegenerate = r.min_eig > threshold;
  return r;
}

// ---------------------------------------------------------------------------
// Projected linear solves

struct LinearControls {
  int max_iter = 400;
  double tol = 1e-10;  ///< relative to the projected right-hand side
};

struct LinearResult {
  ScalarField u;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<double> history;
};

class LinearSolveError : public SolverError {
 public:
  LinearSolveError(const std::string& what, std::vector<double> hist) : SolverError(what), history(std::move(hist)) {}
  std::vector<double> history;
};

/// Dense factorization of the bordered system for pi L u = pi r, u in K-perp,
/// at one metric. Exact inverse there; a preconditioner at nearby metrics.
class DenseKperpFactor {
 public:
  DenseKperpFactor(const CompositeOperator& L, const std::vector<ScalarField>& basis, const WeightFields& w)
      : grid_(L.outer_metric().grid()), nodes_(grid_->active_nodes().begin(), grid_->active_nodes().end()),
        k_(basis.size()) {
    const MetricField& g = L.outer_metric();
    const std::size_t m = nodes_.size();
    W_.resize(m);
    for (std::size_t a = 0; a < m; ++a) {
      const auto i = nodes_[a];
      W_[a] = w.psi(i) * w.psi(i) * g.sqrt_det()(i) * grid_->cell_volume();
    }
    A_ = Eigen::MatrixXd::Zero(m + k_, m + k_);
    ScalarField e(grid_);
    for (std::size_t b = 0; b < m; ++b) {
      e(nodes_[b]) = 1.0;
      const ScalarField Le = L.apply(e);
      e(nodes_[b]) = 0.0;
      for (std::size_t a = 0; a < m; ++a) A_(a, b) = W_[a] * Le(nodes_[a]);
    }
    D_.resize(m);
    for (std::size_t a = 0; a < m; ++a) D_[a] = 1.0 / std::sqrt(std::max(A_(a, a), 1e-300));
    for (std::size_t b = 0; b < m; ++b)
      for (std::size_t a = 0; a < b; ++a) {
        const double s = 0.5 * (A_(a, b) + A_(b, a)) * D_[a] * D_[b];
        A_(a, b) = A_(b, a) = s;
      }
    for (std::size_t a = 0; a < m; ++a) A_(a, a) *= D_[a] * D_[a];
    for (std::size_t c = 0; c < k_; ++c)
      for (std::size_t a = 0; a < m; ++a) A_(a, m + c) = A_(m + c, a) = D_[a] * W_[a] * basis[c](nodes_[a]);
    lu_.emplace(A_);
  }

  const GridPtr& grid() const { return grid_; }
  std::size_t kernel_size() const { return k_; }

  ScalarField solve(const ScalarField& r) const {
    const std::size_t m = nodes_.size();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m + k_);
    for (std::size_t a = 0; a < m; ++a) b(a) = D_[a] * W_[a] * r(nodes_[a]);
    const Eigen::VectorXd y = lu_->solve(b);
    ScalarField u(grid_);
    for (std::size_t a = 0; a < m; ++a) u(nodes_[a]) = D_[a] * y(a);
    return u;
  }

 private:
  GridPtr grid_;
  std::vector<std::size_t> nodes_;
  std::size_t k_;
  std::vector<double> W_, D_;
  Eigen::MatrixXd A_;
  std::optional<Eigen::PartialPivLU<Eigen::Ref<Eigen::MatrixXd>>> lu_;
};

namespace detail {
inline void axpy_active(ScalarField& y, double a, const ScalarField& x) {
  for (auto i : y.g().active_nodes()) y(i) += a * x(i);
}

inline void require_projected(const ScalarField& rhs, const std::vector<ScalarField>& basis, const ScalarField& psi,
                              const MetricField& g) {
  if (basis.empty()) return;
  const double nr = std::sqrt(std::max(weighted_inner(rhs, rhs, psi, g), 0.0));
  double k2 = 0.0;
  for (double c : kernel_components(rhs, basis, psi, g)) k2 += c * c;
  if (std::sqrt(k2) > 1e-10 * nr + 1e-300)
    throw SolverError("solve_projected: right-hand side has a kernel component (" + std::to_string(std::sqrt(k2)) +
                      " of " + std::to_string(nr) + "); project it first");
}

inline std::function<ScalarField(const ScalarField&)> make_preconditioner(
    const DenseKperpFactor* pre, const WeightFields& w, const std::vector<ScalarField>& basis,
    const MetricField& g) {
  if (pre)
    return [pre, &w, &basis, &g](const ScalarField& r) { return project_Kperp(pre->solve(r), basis, w.psi, g); };
  return [&w, &basis, &g](const ScalarField& r) {
    ScalarField z(r.grid());
    for (auto i : r.g().active_nodes()) z(i) = r(i) / std::pow(w.phi(i), 4);
    return project_Kperp(z, basis, w.psi, g);
  };
}
}  // namespace detail

/// Preconditioned conjugate gradients for pi L u = rhs on K-perp in
/// L^2_psi(g), with L the composite operator at g (symmetric there).
inline LinearResult solve_projected(const CompositeOperator& L, const ScalarField& rhs,
                                    const std::vector<ScalarField>& basis, const WeightFields& w,
                                    const LinearControls& ctl, const DenseKperpFactor* pre = nullptr) {
  const MetricField& g = L.outer_metric();
  detail::require_projected(rhs, basis, w.psi, g);
  const auto& grid = g.grid();
  const auto ip = [&](const ScalarField& a, const ScalarField& b) { return weighted_inner(a, b, w.psi, g); };
  const auto proj = [&](const ScalarField& f) { return project_Kperp(f, basis, w.psi, g); };
  const auto precond = detail::make_preconditioner(pre, w, basis, g);

  LinearResult res;
  res.u = ScalarField(grid);
  const ScalarField b = proj(rhs);
  ScalarField r = b;
  const double nb = std::sqrt(ip(r, r));
  res.history.push_back(nb);
  if (nb == 0.0) {
    res.converged = true;
    return res;
  }
  ScalarField z = precond(r);
  ScalarField p = z;
  double rz = ip(r, z);
  for (int it = 1; it <= ctl.max_iter; ++it) {
    ScalarField Ap = proj(L.apply(p));
    const double pAp = ip(p, Ap);
    if (!(pAp > 0.0)) throw LinearSolveError("solve_projected: operator not positive on the search direction", res.history);
    const double alpha = rz / pAp;
    detail::axpy_active(res.u, alpha, p);
    detail::axpy_active(r, -alpha, Ap);
    if (it % 25 == 0) {
      r = b;
      detail::axpy_active(r, -1.0, proj(L.apply(res.u)));
    }
    const double nr = std::sqrt(ip(r, r));
    res.history.push_back(nr);
    res.iterations = it;
    res.residual = nr / nb;
    if (nr <= ctl.tol * nb) {
      res.converged = true;
      break;
    }
    z = precond(r);
    const double rz_new = ip(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (auto i : grid->active_nodes()) p(i) = z(i) + beta * p(i);
    p = proj(p);
  }
  res.u = proj(res.u);
  if (!res.converged)
    throw LinearSolveError("solve_projected: no convergence in " + std::to_string(ctl.max_iter) +
                               " iterations (relative residual " + std::to_string(res.residual) + ")",
                           res.history);
  return res;
}

/// Right-preconditioned restarted GMRES in L^2_psi(g), for the non-symmetric
/// frozen-adjoint operator.
inline LinearResult solve_projected_gmres(const CompositeOperator& L, const ScalarField& rhs,
                                          const std::vector<ScalarField>& basis, const WeightFields& w,
                                          const MetricField& g, const LinearControls& ctl,
                                          const DenseKperpFactor* pre = nullptr, int restart = 40) {
  detail::require_projected(rhs, basis, w.psi, g);
  const auto& grid = g.grid();
  const auto ip = [&](const ScalarField& a, const ScalarField& b) { return weighted_inner(a, b, w.psi, g); };
  const auto proj = [&](const ScalarField& f) { return project_Kperp(f, basis, w.psi, g); };
  const auto prec = detail::make_preconditioner(pre, w, basis, g);
  LinearResult res;
  res.u = ScalarField(grid);
  const ScalarField b = proj(rhs);
  const double nb = std::sqrt(ip(b, b));
  res.history.push_back(nb);
  if (nb == 0.0) {
    res.converged = true;
    return res;
  }
  int total = 0;
  while (true) {
    ScalarField r = b;
    detail::axpy_active(r, -1.0, proj(L.apply(res.u)));
    const double beta = std::sqrt(ip(r, r));
    res.residual = beta / nb;
    if (beta <= ctl.tol * nb) {
      res.converged = true;
      break;
    }
    if (total >= ctl.max_iter) break;
    std::vector<ScalarField> V{(1.0 / beta) * r};
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(restart + 1, restart);
    int k = 0;
    while (k < restart && total < ctl.max_iter) {
      ScalarField wv = proj(L.apply(prec(V[k])));
      for (int j = 0; j <= k; ++j) {
        H(j, k) = ip(wv, V[j]);
        detail::axpy_active(wv, -H(j, k), V[j]);
      }
      H(k + 1, k) = std::sqrt(ip(wv, wv));
      ++k;
      ++total;
      Eigen::VectorXd e = Eigen::VectorXd::Zero(k + 1);
      e(0) = beta;
      const auto Hk = H.topLeftCorner(k + 1, k);
      const Eigen::VectorXd y = Hk.colPivHouseholderQr().solve(e);
      const double est = (e - Hk * y).norm();
      res.history.push_back(est);
      if (H(k, k - 1) == 0.0 || est <= ctl.tol * nb) break;
      V.push_back((1.0 / H(k, k - 1)) * wv);
    }
    Eigen::VectorXd e = Eigen::VectorXd::Zero(k + 1);
    e(0) = beta;
    const Eigen::VectorXd y = H.topLeftCorner(k + 1, k).colPivHouseholderQr().solve(e);
    ScalarField upd(grid);
    for (int j = 0; j < k; ++j) detail::axpy_active(upd, y(j), V[j]);
    detail::axpy_active(res.u, 1.0, prec(upd));
  }
  res.iterations = total;
  if (!res.converged)
    throw LinearSolveError("solve_projected (gmres): no convergence in " + std::to_string(ctl.max_iter) +
                               " iterations (relative residual " + std::to_string(res.residual) + ")",
                           res.history);
  return res;
}

// ---------------------------------------------------------------------------
// Newton / Picard gluing

enum class GlueMode { newton, picard };

struct SolverControls {
  int newton_max = 10;
  double newton_tol = 1e-8;
  int linear_max = 400;
  double linear_tol = 1e-10;
  bool use_frozen_adjoint = false;  ///< L-hat: adjoint at g_chi, outer operator at the current metric
  GlueMode mode = GlueMode::newton;
  int refactor_after = 30;  ///< preconditioned iterations before the dense factor is rebuilt

  void validate() const {
    if (newton_max < 0 || linear_max < 1) throw ConfigError("solver: iteration caps must be positive");
    if (!(newton_tol > 0.0) || !(linear_tol > 0.0)) throw ConfigError("solver: tolerances must be positive");
  }
};

struct CutoffSpec {
  double r1 = 0.0, r2 = 0.0;
  std::optional<std::pair<double, double>> scalar;  ///< optional second cutoff for R_chi
};

struct GlueProblem {
  MetricField g, gbar;
  CutoffSpec cutoff;
  WeightSpec weights;
  KernelModel kernel = KernelModel::euclidean;
  std::vector<ScalarField> kernel_fields;
  SolverControls controls;
  /// Optional factor from an earlier, nearby problem on the same grid.
  std::shared_ptr<const DenseKperpFactor> preconditioner;

  void validate() const {
    const auto& grid = g.grid();
    if (grid != gbar.grid()) throw DomainError("glue: g and gbar live on different grids");
    if (!(grid->inner() < cutoff.r1 && cutoff.r1 < cutoff.r2 && cutoff.r2 < grid->outer()))
      throw DomainError("glue: need r_in < r1 < r2 < r_out");
    if (cutoff.scalar) {
      const auto [a, b] = *cutoff.scalar;
      if (!(grid->inner() < a && a < b && b < grid->outer())) throw DomainError("glue: bad scalar cutoff radii");
    }
    for (const auto& f : kernel_fields)
      if (f.grid() != grid) throw DomainError("glue: kernel field on a different grid");
    weights.validate();
    controls.validate();
  }
};

struct IterationRecord {
  int iteration = 0;
  double weighted = 0.0;  ///< ||pi psi^-1 (R - R_chi)||_{L^2}
  double l2 = 0.0;        ///< ||R - R_chi||_{L^2}
  double max = 0.0;       ///< max |R - R_chi|
  int linear_iterations = 0;
  double linear_residual = 0.0;
};

struct GlueReport {
  SymTensorField h;
  ScalarField u;
  ScalarField chi;
  ScalarField R_chi;
  ScalarField R;  ///< R(g_chi + h)
  MetricField g_tilde;  ///< g_chi + h
  std::vector<IterationRecord> trace;
  std::vector<double> q;
  double support_certificate = 0.0;  ///< max |h| where psi = 0
  double collar_residual = 0.0;      ///< max |R - R_chi| on annulus nodes outside the active set
  double min_R = 0.0;                ///< min R(g_chi + h) on the active nodes
  double min_R_inputs = 0.0;         ///< min of the input curvatures on the active nodes
  double h_max = 0.0;
  bool converged = false;
  int iterations = 0;
  int factorizations = 0;
  std::string message;
  std::shared_ptr<const DenseKperpFactor> preconditioner;
};

namespace detail {
struct ResidualNorms {
  ScalarField F;  ///< psi^-2 (R - R_chi) on the active nodes
  double weighted, l2, max;
};

inline ResidualNorms residual(const ScalarField& R, const ScalarField& R_chi, const WeightFields& w,
                              const std::vector<ScalarField>& basis, const MetricField& g) {
  const auto& grid = g.grid();
  ResidualNorms out{ScalarField(grid), 0.0, 0.0, 0.0};
  ScalarField diff(grid);
  for (auto i : grid->active_nodes()) {
    const double d = R(i) - R_chi(i);
    diff(i) = d;
    const double ps = w.psi(i);
    out.F(i) = ps > 0.0 ? d / (ps * ps) : 0.0;
    out.max = std::max(out.max, std::abs(d));
  }
  const auto one = make_scalar(grid, [](const Point&) { return 1.0; });
  out.l2 = std::sqrt(weighted_inner(diff, diff, one, g));
  const auto pF = project_Kperp(out.F, basis, w.psi, g);
  out.weighted = std::sqrt(weighted_inner(pF, pF, w.psi, g));
  return out;
}

inline MetricField perturbed(const MetricField& base, const SymTensorField& h) {
  SymTensorField m = base.metric();
  m += h;
  try {
    return MetricField(std::move(m));
  } catch (const SolverError& e) {
    throw SolverError(std::string("glue: metric degeneration, g_chi + h ") + e.what());
  }
}
}  // namespace detail

inline GlueReport glue(const GlueProblem& P) {
  P.validate();
  const auto& grid = P.g.grid();
  const int n = grid->dim();
  GlueReport rep;
  rep.chi = make_cutoff(grid, P.cutoff.r1, P.cutoff.r2);
  std::optional<ScalarField> chiR;
  if (P.cutoff.scalar) chiR = make_cutoff(grid, P.cutoff.scalar->first, P.cutoff.scalar->second);
  Blend bl = blend(P.g, P.gbar, rep.chi, chiR ? &*chiR : nullptr);
  rep.R_chi = bl.R_chi;
  const WeightFields w = eval_weights(grid, n, P.weights);
  const auto raw = raw_kernel(P.kernel, grid, P.kernel_fields);

  rep.h = SymTensorField(grid);
  rep.u = ScalarField(grid);
  auto factor = P.preconditioner;
  if (factor && (factor->grid() != grid || factor->kernel_size() != raw.size())) factor.reset();
  const bool picard = P.controls.mode == GlueMode::picard;

  MetricField current = bl.g_chi;
  std::vector<ScalarField> basis;
  ScalarField R;
  for (int k = 0;; ++k) {
    if (k > 0) current = detail::perturbed(bl.g_chi, rep.h);
    R = scalar_curvature(current);
    basis = orthonormalize(raw, w.psi, current);
    auto norms = detail::residual(R, rep.R_chi, w, basis, current);
    IterationRecord rec{k, norms.weighted, norms.l2, norms.max, 0, 0.0};
    rep.iterations = k;
    if (norms.weighted <= P.controls.newton_tol) {
      rep.trace.push_back(rec);
      rep.converged = true;
      break;
    }
    if (k >= P.controls.newton_max || !std::isfinite(norms.weighted)) {
      rep.trace.push_back(rec);
      rep.message = "no convergence after " + std::to_string(k) + " iterations";
      break;
    }
    // Operator metric: g_chi for Picard, the current metric otherwise.
    const MetricField& opm = picard ? bl.g_chi : current;
    const MetricField& adj = (picard || P.controls.use_frozen_adjoint) ? bl.g_chi : current;
    const auto obasis = picard ? orthonormalize(raw, w.psi, bl.g_chi) : basis;
    CompositeOperator L(opm, adj, w);
    ScalarField rhs = project_Kperp(norms.F, obasis, w.psi, opm);
    rhs *= -1.0;
    const auto run = [&](const DenseKperpFactor* pre, int cap) {
      const LinearControls lc{cap, P.controls.linear_tol};
      if (P.controls.use_frozen_adjoint && !picard) return solve_projected_gmres(L, rhs, obasis, w, opm, lc, pre);
      return solve_projected(L, rhs, obasis, w, lc, pre);
    };
    const auto refactor = [&] {
      factor = std::make_shared<const DenseKperpFactor>(L, obasis, w);
      ++rep.factorizations;
    };
    try {
      if (!factor) refactor();
      LinearResult lr;
      try {
        lr = run(factor.get(), std::min(P.controls.refactor_after, P.controls.linear_max));
      } catch (const LinearSolveError&) {
        refactor();
        lr = run(factor.get(), P.controls.linear_max);
      }
      rec.linear_iterations = lr.iterations;
      rec.linear_residual = lr.residual;
      rep.trace.push_back(rec);
      rep.h += L.correction(lr.u);
      rep.u += lr.u;
    } catch (const LinearSolveError& e) {
      rep.trace.push_back(rec);
      rep.message = e.what();
      break;
    }
  }

  rep.preconditioner = factor;
  rep.R = R;
  rep.g_tilde = current;
  const auto full = detail::residual(R, rep.R_chi, w, basis, current).F;
  rep.q = kernel_components(full, basis, w.psi, current);
  const auto Rg = scalar_curvature(P.g), Rb = scalar_curvature(P.gbar);
  rep.min_R = std::numeric_limits<double>::infinity();
  rep.min_R_inputs = std::numeric_limits<double>::infinity();
  for (auto i : grid->active_nodes()) {
    rep.min_R = std::min(rep.min_R, R(i));
    rep.min_R_inputs = std::min({rep.min_R_inputs, Rg(i), Rb(i)});
  }
  for (std::size_t i = 0; i < grid->size(); ++i) {
    double hm = 0.0;
    for (int c = 0; c < rep.h.components(); ++c) hm = std::max(hm, std::abs(rep.h(i, c)));
    rep.h_max = std::max(rep.h_max, hm);
    if (w.psi(i) == 0.0) rep.support_certificate = std::max(rep.support_certificate, hm);
    const double r = grid->radial(i);
    if (!grid->is_active(i) && grid->depth(i) >= kRicciDepth && r >= grid->inner() && r <= grid->outer())
      rep.collar_residual = std::max(rep.collar_residual, std::abs(R(i) - rep.R_chi(i)));
  }
  return rep;
}

}  // namespace scglue
