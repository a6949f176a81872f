#pragma once
// Pointwise Riemannian curvature on grid fields. Christoffel symbols come from
// first differences of g, Ricci from first differences of the Christoffel
// symbols, so Ricci and R are valid at nodes of depth >= 4.

#include <utility>
#include <vector>

#include "scglue/grid.hpp"

namespace scglue {

inline constexpr int kChristoffelDepth = 2;
inline constexpr int kRicciDepth = 4;

/// Full-index (unpacked) curvature data of a metric, templated on the scalar
/// type so the same code runs on dual numbers.
template <class T>
struct CurvatureData {
  int n = 0;
  std::vector<T> ginv;   ///< n*n per node, all nodes
  std::vector<T> sqrtg;  ///< per node
  std::vector<T> dg;     ///< [a][b][c] = d_a g_bc, depth >= 2
  std::vector<T> gamma;  ///< [k][i][j] = Gamma^k_ij, depth >= 2
  std::vector<T> ric;    ///< [i][j], depth >= 4
  std::vector<T> R;      ///< depth >= 4

  std::size_t n2() const { return static_cast<std::size_t>(n) * n; }
  std::size_t n3() const { return static_cast<std::size_t>(n) * n * n; }
};

/// Curvature of packed metric values (ncomp = n(n+1)/2 per node).
template <class T>
CurvatureData<T> compute_curvature(const Grid& grid, const std::vector<T>& gpacked) {
  const int n = grid.dim();
  const int ns = sym_size(n);
  const std::size_t N = grid.size();
  const double dx = grid.spacing();
  CurvatureData<T> cd;
  cd.n = n;
  const auto n2 = cd.n2(), n3 = cd.n3();
  cd.ginv.assign(N * n2, T(0.0));
  cd.sqrtg.assign(N, T(0.0));
  cd.dg.assign(N * n3, T(0.0));
  cd.gamma.assign(N * n3, T(0.0));
  cd.ric.assign(N * n2, T(0.0));
  cd.R.assign(N, T(0.0));

  bool ok = true;
  std::size_t bad = 0;
  parallel_for(N, [&](std::size_t node) {
    SmallMat<T> m, inv;
    m.n = n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = gpacked[node * ns + sym_index(i, j, n)];
    T det;
    if (!spd_inverse(m, inv, det)) {
      ok = false;
      bad = node;
      return;
    }
    using std::sqrt;
    cd.sqrtg[node] = sqrt(det);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) cd.ginv[node * n2 + i * n + j] = inv(i, j);
  });
  if (!ok) throw SolverError("metric not positive-definite at node " + std::to_string(bad));

  parallel_for(N, [&](std::size_t node) {
    if (grid.depth(node) < kChristoffelDepth) return;
    T* dg = &cd.dg[node * n3];
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = b; c < n; ++c) {
          T v = fd::first(gpacked, ns, sym_index(b, c, n), node, grid.stride(a), dx);
          dg[a * n2 + b * n + c] = v;
          dg[a * n2 + c * n + b] = v;
        }
    const T* gi = &cd.ginv[node * n2];
    T* gam = &cd.gamma[node * n3];
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          T s = T(0.0);
          for (int l = 0; l < n; ++l)
            s += gi[k * n + l] * (dg[i * n2 + j * n + l] + dg[j * n2 + i * n + l] - dg[l * n2 + i * n + j]);
          s *= 0.5;
          gam[k * n2 + i * n + j] = s;
          gam[k * n2 + j * n + i] = s;
        }
  });

  const int n3i = static_cast<int>(n3);
  parallel_for(N, [&](std::size_t node) {
    if (grid.depth(node) < kRicciDepth) return;
    const T* gam = &cd.gamma[node * n3];
    // dgam[m][k][i][j] = d_m Gamma^k_ij
    std::array<T, kMaxDim * kMaxDim * kMaxDim * kMaxDim> dgam;
    for (int m = 0; m < n; ++m)
      for (int c = 0; c < n3i; ++c) dgam[m * n3 + c] = fd::first(cd.gamma, n3i, c, node, grid.stride(m), dx);
    T* ric = &cd.ric[node * n2];
    const T* gi = &cd.ginv[node * n2];
    T R = T(0.0);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        T s = T(0.0);
        for (int k = 0; k < n; ++k) {
          s += dgam[k * n3 + k * n2 + i * n + j];
          s -= dgam[i * n3 + k * n2 + k * n + j];
          for (int l = 0; l < n; ++l) {
            s += gam[k * n2 + k * n + l] * gam[l * n2 + i * n + j];
            s -= gam[k * n2 + i * n + l] * gam[l * n2 + k * n + j];
          }
        }
        ric[i * n + j] = s;
        ric[j * n + i] = s;
        R += (i == j ? 1.0 : 2.0) * gi[i * n + j] * s;
      }
    cd.R[node] = R;
  });
  return cd;
}

inline CurvatureData<double> compute_curvature(const MetricField& g) {
  return compute_curvature(g.metric().g(), g.metric().values());
}

/// Christoffel symbols Gamma^k_ij, packed as [k][sym(i,j)].
inline ChristoffelField christoffel(const MetricField& g) {
  const auto cd = compute_curvature(g);
  const int n = g.dim();
  const int ns = sym_size(n);
  ChristoffelField out(g.grid());
  for (std::size_t node = 0; node < out.size(); ++node)
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) out(node, k * ns + sym_index(i, j, n)) = cd.gamma[node * cd.n3() + k * n * n + i * n + j];
  return out;
}

inline ScalarField scalar_curvature(const MetricField& g) {
  const auto cd = compute_curvature(g);
  ScalarField R(g.grid());
  R.values() = cd.R;
  return R;
}

/// Ricci tensor and scalar curvature.
inline std::pair<SymTensorField, ScalarField> ricci_scalar(const MetricField& g) {
  const auto cd = compute_curvature(g);
  const int n = g.dim();
  SymTensorField ric(g.grid());
  ScalarField R(g.grid());
  for (std::size_t node = 0; node < R.size(); ++node) {
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) ric.at(node, i, j) = cd.ric[node * cd.n2() + i * n + j];
    R(node) = cd.R[node];
  }
  return {std::move(ric), std::move(R)};
}

/// Hess u = d_i d_j u - Gamma^k_ij d_k u and the positive Laplacian
/// Delta u = -g^ij Hess_ij u, at nodes of depth >= 2.
inline std::pair<SymTensorField, ScalarField> hessian_laplacian(const MetricField& g, const ScalarField& u,
                                                                const CurvatureData<double>& cd) {
  u.check_same_grid(g.metric());
  const Grid& grid = u.g();
  const int n = grid.dim();
  const double dx = grid.spacing();
  SymTensorField hess(u.grid());
  ScalarField lap(u.grid());
  parallel_for(grid.size(), [&](std::size_t node) {
    if (grid.depth(node) < kStencilRadius) return;
    std::array<double, kMaxDim> du{};
    for (int k = 0; k < n; ++k) du[k] = fd::first(u.values(), 1, 0, node, grid.stride(k), dx);
    double trace = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        double d2 = i == j ? fd::second(u.values(), 1, 0, node, grid.stride(i), dx)
                           : fd::mixed(u.values(), 1, 0, node, grid.stride(i), grid.stride(j), dx);
        for (int k = 0; k < n; ++k) d2 -= cd.gamma[node * cd.n3() + k * n * n + i * n + j] * du[k];
        hess.at(node, i, j) = d2;
        trace += (i == j ? 1.0 : 2.0) * g.inv(node, i, j) * d2;
      }
    lap(node) = -trace;
  });
  return {std::move(hess), std::move(lap)};
}

inline std::pair<SymTensorField, ScalarField> hessian_laplacian(const MetricField& g, const ScalarField& u) {
  return hessian_laplacian(g, u, compute_curvature(g));
}

/// div div h with (div h)_j = g^ik nabla_i h_kj; valid at depth >= 4.
inline ScalarField div_div(const MetricField& g, const SymTensorField& h, const CurvatureData<double>& cd) {
  h.check_same_grid(g.metric());
  const Grid& grid = h.g();
  const int n = grid.dim();
  const int ns = sym_size(n);
  const double dx = grid.spacing();
  const auto n2 = cd.n2(), n3 = cd.n3();
  CovectorField w(h.grid());
  parallel_for(grid.size(), [&](std::size_t node) {
    if (grid.depth(node) < kStencilRadius) return;
    const double* gam = &cd.gamma[node * n3];
    // nabla_i h_kj
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
          double cov = fd::first(h.values(), ns, sym_index(k, j, n), node, grid.stride(i), dx);
          for (int m = 0; m < n; ++m)
            cov -= gam[m * n2 + i * n + k] * h.at(node, m, j) + gam[m * n2 + i * n + j] * h.at(node, k, m);
          s += g.inv(node, i, k) * cov;
        }
      w(node, j) = s;
    }
  });
  ScalarField out(h.grid());
  parallel_for(grid.size(), [&](std::size_t node) {
    if (grid.depth(node) < 2 * kStencilRadius) return;
    const double* gam = &cd.gamma[node * n3];
    double s = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double cov = fd::first(w.values(), n, j, node, grid.stride(i), dx);
        for (int k = 0; k < n; ++k) cov -= gam[k * n2 + i * n + j] * w(node, k);
        s += g.inv(node, i, j) * cov;
      }
    out(node) = s;
  });
  return out;
}

inline ScalarField div_div(const MetricField& g, const SymTensorField& h) {
  return div_div(g, h, compute_curvature(g));
}

/// <A,B>_g = g^ik g^jl A_ij B_kl and Tr_g A = g^ij A_ij.
inline std::pair<ScalarField, ScalarField> inner_and_trace(const MetricField& g, const SymTensorField& A,
                                                           const SymTensorField& B) {
  A.check_same_grid(g.metric());
  B.check_same_grid(g.metric());
  const int n = g.dim();
  ScalarField inner(g.grid()), trace(g.grid());
  for (std::size_t node = 0; node < inner.size(); ++node) {
    double s = 0.0, t = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        t += g.inv(node, i, j) * A.at(node, i, j);
        for (int k = 0; k < n; ++k)
          for (int l = 0; l < n; ++l) s += g.inv(node, i, k) * g.inv(node, j, l) * A.at(node, i, j) * B.at(node, k, l);
      }
    inner(node) = s;
    trace(node) = t;
  }
  return {std::move(inner), std::move(trace)};
}

}  // namespace scglue
