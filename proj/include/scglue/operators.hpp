#pragma once
// Linearized scalar curvature P_g, its adjoint P*_g and the weighted
// composite L = psi^-2 P (psi^2 phi^4 P* .).
//
// P_g is the exact derivative of the discrete scalar curvature (so Newton
// steps see the true Jacobian). The solver's adjoint is the exact discrete
// transpose of P_g in the dmu_g pairings, which makes L symmetric positive
// semidefinite in L^2_psi on the active nodes. apply_Pstar is the direct
// formula Hess u + (Delta u) g - u Ric, kept as an independent route.

#include <array>
#include <utility>
#include <vector>

#include "scglue/curvature.hpp"
#include "scglue/weights.hpp"

namespace scglue {

/// Linearization of the discrete scalar curvature about a fixed metric,
/// evaluated on a chosen set of output nodes (each of depth >= 4).
class Linearization {
 public:
  Linearization(const MetricField& g, std::vector<std::size_t> outputs)
      : grid_(g.grid()), cd_(compute_curvature(g)), outputs_(std::move(outputs)) {
    build_sets();
  }
  Linearization(const MetricField& g, std::vector<std::size_t> outputs, CurvatureData<double> cd)
      : grid_(g.grid()), cd_(std::move(cd)), outputs_(std::move(outputs)) {
    build_sets();
  }

  const GridPtr& grid() const { return grid_; }
  const CurvatureData<double>& curvature() const { return cd_; }
  const std::vector<std::size_t>& outputs() const { return outputs_; }

  /// delta R at output nodes (zero elsewhere).
  ScalarField apply(const SymTensorField& h) const {
    const Grid& grid = *grid_;
    const int n = grid.dim();
    const std::size_t n2 = n * n, n3 = n2 * n;
    const double dx = grid.spacing();
    const int ns = sym_size(n);
    const auto& hv = h.values();
    // delta ginv and delta Gamma on the middle set.
    std::vector<double> dginv(mid_.size() * n2), dgam(mid_.size() * n3);
    parallel_for(mid_.size(), [&](std::size_t m) {
      const std::size_t z = mid_[m];
      const double* gi = &cd_.ginv[z * n2];
      const double* dg = &cd_.dg[z * n3];
      std::array<double, 16> hz{};
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) hz[i * n + j] = hv[z * ns + sym_index(i, j, n)];
      double* dgi = &dginv[m * n2];
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          double s = 0.0;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) s += gi[a * n + i] * hz[i * n + j] * gi[j * n + b];
          dgi[a * n + b] = -s;
        }
      std::array<double, 64> dh{};  // [a][b][c] = D_a h_bc
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = b; c < n; ++c) {
            double v = fd::first(hv, ns, sym_index(b, c, n), z, grid.stride(a), dx);
            dh[a * n2 + b * n + c] = v;
            dh[a * n2 + c * n + b] = v;
          }
      double* out = &dgam[m * n3];
      for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int l = 0; l < n; ++l) {
              const double S = dg[i * n2 + j * n + l] + dg[j * n2 + i * n + l] - dg[l * n2 + i * n + j];
              const double dS = dh[i * n2 + j * n + l] + dh[j * n2 + i * n + l] - dh[l * n2 + i * n + j];
              s += dgi[k * n + l] * S + gi[k * n + l] * dS;
            }
            out[k * n2 + i * n + j] = 0.5 * s;
          }
    });
    ScalarField result(grid_);
    parallel_for(outputs_.size(), [&](std::size_t q) {
      const std::size_t y = outputs_[q];
      const std::size_t my = mid_index_[y];
      const double* gam = &cd_.gamma[y * n3];
      const double* ric = &cd_.ric[y * n2];
      const double* gi = &cd_.ginv[y * n2];
      const double* dgi = &dginv[my * n2];
      const double* dG = &dgam[my * n3];
      double dR = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) dR += dgi[i * n + j] * ric[i * n + j];
      // Ricci is assembled from the i <= j formula and mirrored; follow suit.
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          double s = 0.0;
          for (int k = 0; k < n; ++k) {
            for (int o = -2; o <= 2; ++o) {
              if (o == 0) continue;
              const double c = fd::kFirst[o + 2] / dx;
              const std::size_t yk = y + o * static_cast<std::ptrdiff_t>(grid.stride(k));
              const std::size_t yi = y + o * static_cast<std::ptrdiff_t>(grid.stride(i));
              s += c * dgam[mid_index_[yk] * n3 + k * n2 + i * n + j];
              s -= c * dgam[mid_index_[yi] * n3 + k * n2 + k * n + j];
            }
            for (int l = 0; l < n; ++l) {
              s += dG[k * n2 + k * n + l] * gam[l * n2 + i * n + j] + gam[k * n2 + k * n + l] * dG[l * n2 + i * n + j];
              s -= dG[k * n2 + i * n + l] * gam[l * n2 + k * n + j] + gam[k * n2 + i * n + l] * dG[l * n2 + k * n + j];
            }
          }
          dR += (i == j ? 1.0 : 2.0) * gi[i * n + j] * s;
        }
      result(y) = dR;
    });
    return result;
  }

  /// Gradient T of sum_y ubar(y) * (P h)(y) with respect to symmetric h in
  /// the pairing sum_nodes sum_ij T_ij h_ij (packed storage of T_ij).
  SymTensorField transpose(const ScalarField& ubar) const {
    const Grid& grid = *grid_;
    const int n = grid.dim();
    const std::size_t n2 = n * n, n3 = n2 * n;
    const double dx = grid.spacing();
    std::vector<double> dginv_bar(mid_.size() * n2, 0.0), dgam_bar(mid_.size() * n3, 0.0);
    for (const std::size_t y : outputs_) {
      const double ub = ubar(y);
      if (ub == 0.0) continue;
      const std::size_t my = mid_index_[y];
      const double* gam = &cd_.gamma[y * n3];
      const double* ric = &cd_.ric[y * n2];
      const double* gi = &cd_.ginv[y * n2];
      double* dgib = &dginv_bar[my * n2];
      double* dGb = &dgam_bar[my * n3];
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) dgib[i * n + j] += ub * ric[i * n + j];
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          const double r = (i == j ? 1.0 : 2.0) * ub * gi[i * n + j];
          for (int k = 0; k < n; ++k) {
            for (int o = -2; o <= 2; ++o) {
              if (o == 0) continue;
              const double c = fd::kFirst[o + 2] / dx * r;
              const std::size_t yk = y + o * static_cast<std::ptrdiff_t>(grid.stride(k));
              const std::size_t yi = y + o * static_cast<std::ptrdiff_t>(grid.stride(i));
              dgam_bar[mid_index_[yk] * n3 + k * n2 + i * n + j] += c;
              dgam_bar[mid_index_[yi] * n3 + k * n2 + k * n + j] -= c;
            }
            for (int l = 0; l < n; ++l) {
              dGb[k * n2 + k * n + l] += r * gam[l * n2 + i * n + j];
              dGb[l * n2 + i * n + j] += r * gam[k * n2 + k * n + l];
              dGb[k * n2 + i * n + l] -= r * gam[l * n2 + k * n + j];
              dGb[l * n2 + k * n + j] -= r * gam[k * n2 + i * n + l];
            }
          }
        }
    }
    // Back through delta Gamma and delta ginv on the middle set.
    std::vector<double> hbar(grid.size() * n2, 0.0);
    for (std::size_t m = 0; m < mid_.size(); ++m) {
      const std::size_t z = mid_[m];
      const double* gi = &cd_.ginv[z * n2];
      const double* dg = &cd_.dg[z * n3];
      const double* dGb = &dgam_bar[m * n3];
      double* dgib = &dginv_bar[m * n2];
      std::array<double, 64> dSb{};  // [l][i][j]
      bool any = false;
      for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double gb = 0.5 * dGb[k * n2 + i * n + j];
            if (gb == 0.0) continue;
            any = true;
            for (int l = 0; l < n; ++l) {
              const double S = dg[i * n2 + j * n + l] + dg[j * n2 + i * n + l] - dg[l * n2 + i * n + j];
              dgib[k * n + l] += gb * S;
              dSb[l * n2 + i * n + j] += gb * gi[k * n + l];
            }
          }
      if (any) {
        std::array<double, 64> dhb{};  // [a][b][c]
        for (int l = 0; l < n; ++l)
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
              const double v = dSb[l * n2 + i * n + j];
              dhb[i * n2 + j * n + l] += v;
              dhb[j * n2 + i * n + l] += v;
              dhb[l * n2 + i * n + j] -= v;
            }
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b)
            for (int c = 0; c < n; ++c) {
              const double v = dhb[a * n2 + b * n + c];
              if (v == 0.0) continue;
              for (int o = -2; o <= 2; ++o) {
                if (o == 0) continue;
                const std::size_t t = z + o * static_cast<std::ptrdiff_t>(grid.stride(a));
                hbar[t * n2 + b * n + c] += fd::kFirst[o + 2] / dx * v;
              }
            }
      }
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) s += gi[a * n + i] * dgib[a * n + b] * gi[j * n + b];
          hbar[z * n2 + i * n + j] -= s;
        }
    }
    SymTensorField T(grid_);
    for (std::size_t node = 0; node < grid.size(); ++node)
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j)
          T(node, sym_index(i, j, n)) = 0.5 * (hbar[node * n2 + i * n + j] + hbar[node * n2 + j * n + i]);
    return T;
  }

 private:
  void build_sets() {
    const Grid& grid = *grid_;
    for (auto y : outputs_)
      if (grid.depth(y) < kRicciDepth) throw DomainError("linearization: output node lacks stencil room");
    std::vector<std::uint8_t> mark(grid.size(), 0);
    for (auto y : outputs_) {
      mark[y] = 1;
      for (int a = 0; a < grid.dim(); ++a)
        for (int o = -2; o <= 2; ++o) mark[y + o * static_cast<std::ptrdiff_t>(grid.stride(a))] = 1;
    }
    mid_index_.assign(grid.size(), 0);
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (mark[i]) {
        mid_index_[i] = mid_.size();
        mid_.push_back(i);
      }
  }

  GridPtr grid_;
  CurvatureData<double> cd_;
  std::vector<std::size_t> outputs_;
  std::vector<std::size_t> mid_;
  std::vector<std::size_t> mid_index_;
};

/// P_g h on all nodes of depth >= 4 (exact derivative of the discrete R).
inline ScalarField apply_P(const MetricField& g, const SymTensorField& h) {
  h.check_same_grid(g.metric());
  return Linearization(g, g.grid()->nodes_with_depth(kRicciDepth)).apply(h);
}

/// div div h + Delta Tr h - <Ric, h>, assembled from the curvature operators.
/// `divdiv_sign` exists only so the verification suite can demonstrate that a
/// flipped convention is caught.
inline ScalarField apply_P_formula(const MetricField& g, const SymTensorField& h, double divdiv_sign = 1.0) {
  const auto cd = compute_curvature(g);
  const Grid& grid = *g.grid();
  const int n = grid.dim();
  ScalarField dd = div_div(g, h, cd);
  ScalarField tr(g.grid());
  for (std::size_t node = 0; node < grid.size(); ++node) {
    double t = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) t += g.inv(node, i, j) * h.at(node, i, j);
    tr(node) = t;
  }
  auto [hess, lap] = hessian_laplacian(g, tr, cd);
  ScalarField out(g.grid());
  for (std::size_t node = 0; node < grid.size(); ++node) {
    if (grid.depth(node) < kRicciDepth) continue;
    double ric_h = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k)
          for (int l = 0; l < n; ++l)
            ric_h += g.inv(node, i, k) * g.inv(node, j, l) * cd.ric[node * cd.n2() + i * n + j] * h.at(node, k, l);
    out(node) = divdiv_sign * dd(node) + lap(node) - ric_h;
  }
  return out;
}

/// Hess u + (Delta u) g - u Ric at nodes of depth >= 4.
inline SymTensorField apply_Pstar(const MetricField& g, const ScalarField& u) {
  u.check_same_grid(g.metric());
  const auto cd = compute_curvature(g);
  auto [hess, lap] = hessian_laplacian(g, u, cd);
  const Grid& grid = *g.grid();
  const int n = grid.dim();
  SymTensorField out(g.grid());
  for (std::size_t node = 0; node < grid.size(); ++node) {
    if (grid.depth(node) < kRicciDepth) continue;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j)
        out.at(node, i, j) = hess.at(node, i, j) + lap(node) * g(node, i, j) - u(node) * cd.ric[node * cd.n2() + i * n + j];
  }
  return out;
}

/// |<P h, u>_{dmu_g} - <h, P* u>_{dmu_g}| summed over every node where both
/// operators are defined (depth >= 4), with P the exact linearization and P*
/// the direct formula. h and u should vanish near the box faces.
inline double duality_defect(const MetricField& g, const SymTensorField& h, const ScalarField& u) {
  const auto Ph = apply_P(g, h);
  const auto Pu = apply_Pstar(g, u);
  const auto [inner, trace] = inner_and_trace(g, h, Pu);
  const auto nodes = g.grid()->nodes_with_depth(kRicciDepth);
  std::vector<double> a(nodes.size()), b(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto i = nodes[k];
    a[k] = Ph(i) * u(i) * g.sqrt_det()(i);
    b[k] = inner(i) * g.sqrt_det()(i);
  }
  return std::abs(pairwise_sum(a) - pairwise_sum(b)) * g.grid()->cell_volume();
}

/// Exact discrete adjoint of `lin` in the dmu_g pairings: for h and u,
///   sum_out (P h) u sqrt|g| = sum_nodes <h, P^dag u>_g sqrt|g|.
inline SymTensorField adjoint_Pstar(const Linearization& lin, const MetricField& g, const ScalarField& u) {
  const Grid& grid = *g.grid();
  const int n = grid.dim();
  ScalarField ubar(g.grid());
  for (auto y : lin.outputs()) ubar(y) = u(y) * g.sqrt_det()(y);
  SymTensorField T = lin.transpose(ubar);
  SymTensorField out(g.grid());
  for (std::size_t node = 0; node < grid.size(); ++node) {
    bool any = false;
    for (int c = 0; c < T.components(); ++c) any = any || T(node, c) != 0.0;
    if (!any) continue;
    const double inv_sqrt = 1.0 / g.sqrt_det()(node);
    for (int k = 0; k < n; ++k)
      for (int l = k; l < n; ++l) {
        double s = 0.0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) s += g(node, k, i) * g(node, l, j) * T.at(node, i, j);
        out.at(node, k, l) = s * inv_sqrt;
      }
  }
  return out;
}

/// Weighted composite psi^-2 P_{g_outer}(psi^2 phi^4 P*_{g_inner} u) on the
/// active nodes. With g_outer == g_inner this is L; otherwise it is the
/// frozen-adjoint variant.
class CompositeOperator {
 public:
  CompositeOperator(const MetricField& g_outer, const MetricField& g_inner, const WeightFields& w)
      : outer_metric_(g_outer),
        inner_metric_(g_inner),
        outer_(g_outer, g_outer.grid()->active_nodes()),
        weights_(&w) {
    if (&g_outer != &g_inner) inner_ = std::make_unique<Linearization>(g_inner, g_inner.grid()->active_nodes());
    multiplier_ = ScalarField(g_outer.grid());
    for (std::size_t i = 0; i < multiplier_.size(); ++i) {
      const double ps = w.psi(i), ph = w.phi(i);
      multiplier_(i) = ps * ps * ph * ph * ph * ph;
    }
  }

  const Linearization& outer() const { return outer_; }
  const Linearization& inner() const { return inner_ ? *inner_ : outer_; }
  const MetricField& outer_metric() const { return outer_metric_; }

  /// Correction template h = psi^2 phi^4 P* u (exactly zero where psi is clamped).
  SymTensorField correction(const ScalarField& u) const {
    SymTensorField h = adjoint_Pstar(inner(), inner_metric_, u);
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double m = multiplier_(i);
      for (int c = 0; c < h.components(); ++c) h(i, c) = m == 0.0 ? 0.0 : h(i, c) * m;
    }
    return h;
  }

  ScalarField apply(const ScalarField& u) const {
    ScalarField out = outer_.apply(correction(u));
    for (auto i : out.g().active_nodes()) {
      const double ps = weights_->psi(i);
      out(i) = ps > 0.0 ? out(i) / (ps * ps) : 0.0;
    }
    return out;
  }

 private:
  const MetricField& outer_metric_;
  const MetricField& inner_metric_;
  Linearization outer_;
  std::unique_ptr<Linearization> inner_;
  const WeightFields* weights_;
  ScalarField multiplier_;
};

inline ScalarField apply_L(const MetricField& g, const ScalarField& u, const WeightFields& w) {
  return CompositeOperator(g, g, w).apply(u);
}

inline ScalarField apply_L_hat(const MetricField& g_chi, const MetricField& g, const ScalarField& u,
                               const WeightFields& w) {
  return CompositeOperator(g_chi, g, w).apply(u);
}

}  // namespace scglue
