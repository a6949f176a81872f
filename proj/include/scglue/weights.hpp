#pragma once
// Boundary defining function and the exponential weights
//   phi = x^2,  psi = x^{2(a-n/2)} e^{-s/x},  varphi = x^{2a} e^{-s/x},
// clamped to exact zero where x < x_cut.

#include <cmath>

#include "scglue/curvature.hpp"
#include "scglue/grid.hpp"

namespace scglue {

struct WeightSpec {
  int a = 3;
  double s = 1.0;
  double x_cut = 1.0 / 640.0;
  double smoothing = 0.0;  ///< 0 selects 2*dx

  static WeightSpec defaults(int n) {
    WeightSpec w;
    w.a = n;
    w.s = 1.0;
    w.x_cut = w.s / 640.0;
    return w;
  }

  void validate() const {
    if (a < 1) throw DomainError("weights: a must be >= 1");
    if (!(s > 0.0)) throw DomainError("weights: s must be positive");
    if (!(x_cut > 0.0)) throw DomainError("weights: x_cut must be positive");
    if (s / x_cut > 644.0) throw DomainError("weights: e^{-s/x_cut} underflows below 1e-280");
    if (smoothing < 0.0) throw DomainError("weights: smoothing radius must be >= 0");
  }
};

struct WeightFields {
  ScalarField x;       ///< defining function
  ScalarField phi;
  ScalarField psi;
  ScalarField varphi;
};

/// C^2 even function equal to |d| for |d| >= k with p(0) = 0.
inline double smooth_abs(double d, double k) {
  d = std::abs(d);
  if (k <= 0.0 || d >= k) return d;
  const double t = d / k, t2 = t * t;
  return k * t2 * (15.0 / 8.0 - 1.25 * t2 + 0.375 * t2 * t2);
}

/// Smoothed min(a, b): exact where |a - b| >= k, and equal to a at a == b.
inline double smooth_min(double a, double b, double k) {
  return 0.5 * (a + b) - 0.5 * smooth_abs(a - b, k);
}

inline ScalarField defining_function(const GridPtr& grid, double smoothing = 0.0) {
  const double k = smoothing > 0.0 ? smoothing : 2.0 * grid->spacing();
  ScalarField x(grid);
  for (std::size_t node = 0; node < grid->size(); ++node) {
    const double r = grid->radial(node);
    const double v = smooth_min(r - grid->inner(), grid->outer() - r, k);
    x(node) = std::max(v, 0.0);
  }
  return x;
}

/// Weight values at one defining-function value; n is the manifold dimension.
struct WeightValues {
  double phi, psi, varphi;
};
inline WeightValues weights_at(double x, int n, const WeightSpec& spec) {
  if (!(x >= spec.x_cut)) return {x * x, 0.0, 0.0};
  const double lx = std::log(x);
  return {x * x, std::exp(2.0 * (spec.a - 0.5 * n) * lx - spec.s / x),
          std::exp(2.0 * spec.a * lx - spec.s / x)};
}

inline WeightFields eval_weights(const GridPtr& grid, int n, const WeightSpec& spec) {
  spec.validate();
  WeightFields w{defining_function(grid, spec.smoothing), ScalarField(grid), ScalarField(grid),
                 ScalarField(grid)};
  for (std::size_t node = 0; node < grid->size(); ++node) {
    const auto v = weights_at(w.x(node), n, spec);
    w.phi(node) = v.phi;
    w.psi(node) = v.psi;
    w.varphi(node) = v.varphi;
  }
  return w;
}

/// int u v psi^2 dmu_g over the active nodes.
inline double weighted_inner(const ScalarField& u, const ScalarField& v, const ScalarField& psi,
                             const MetricField& g) {
  u.check_same_grid(v);
  u.check_same_grid(psi);
  u.check_same_grid(g.metric());
  const auto& nodes = u.g().active_nodes();
  std::vector<double> terms(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto i = nodes[k];
    terms[k] = u(i) * v(i) * psi(i) * psi(i) * g.sqrt_det()(i);
  }
  return pairwise_sum(terms) * u.g().cell_volume();
}

/// Discrete H^k_{phi,psi} norm, k in {0, 1, 2}.
inline double weighted_norm(const ScalarField& u, int k, const ScalarField& phi, const ScalarField& psi,
                            const MetricField& g) {
  if (k < 0 || k > 2) throw DomainError("weighted_norm: unsupported k");
  u.check_same_grid(phi);
  u.check_same_grid(g.metric());
  const Grid& grid = u.g();
  const int n = grid.dim();
  const auto& nodes = grid.active_nodes();
  std::vector<double> density(nodes.size());
  for (std::size_t m = 0; m < nodes.size(); ++m) density[m] = u(nodes[m]) * u(nodes[m]);
  if (k >= 1) {
    for (std::size_t m = 0; m < nodes.size(); ++m) {
      const auto i = nodes[m];
      std::array<double, kMaxDim> du{};
      for (int a = 0; a < n; ++a) du[a] = fd::first(u.values(), 1, 0, i, grid.stride(a), grid.spacing());
      double s = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) s += g.inv(i, a, b) * du[a] * du[b];
      density[m] += std::pow(phi(i), 2) * s;
    }
  }
  if (k >= 2) {
    auto [hess, lap] = hessian_laplacian(g, u);
    for (std::size_t m = 0; m < nodes.size(); ++m) {
      const auto i = nodes[m];
      double s = 0.0;
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c)
            for (int d = 0; d < n; ++d) s += g.inv(i, a, c) * g.inv(i, b, d) * hess.at(i, a, b) * hess.at(i, c, d);
      density[m] += std::pow(phi(i), 4) * s;
    }
  }
  for (std::size_t m = 0; m < nodes.size(); ++m) {
    const auto i = nodes[m];
    density[m] *= psi(i) * psi(i) * g.sqrt_det()(i);
  }
  return std::sqrt(pairwise_sum(density) * grid.cell_volume());
}

}  // namespace scglue
