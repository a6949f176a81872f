#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "scglue/errors.hpp"
#include "scglue/grid.hpp"

namespace scglue {

struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss–Legendre rule on [-1, 1], Newton iteration on P_p from the Chebyshev guess.
inline GaussRule gauss_legendre(int p) {
  if (p < 1) throw DomainError("gauss_legendre: order must be >= 1");
  GaussRule rule;
  rule.nodes.resize(p);
  rule.weights.resize(p);
  for (int i = 0; i < (p + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (p + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= p; ++k) {
        double pk = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = pk;
      }
      if (p == 1) p0 = 1.0;
      dp = p * (x * p1 - p0) / (x * x - 1.0);
      double step = p1 / dp;
      x -= step;
      if (std::abs(step) < 1e-16) break;
    }
    double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[p - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[p - 1 - i] = w;
  }
  return rule;
}

/// Volume of the unit sphere S^{n-1} in R^n.
inline double unit_sphere_area(int n) {
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

/// Integral over the sphere of radius `radius` in R^n (n = 2 or 3) of
/// integrand(point, unit_normal). n = 3: Gauss–Legendre in cos(theta) times
/// 2*order uniform azimuths (poles never sampled); n = 2: order-point trapezoid;
/// n = 4: an extra Gauss–Legendre polar angle.
template <class F>
double sphere_quadrature(int n, double radius, F&& integrand, int order = 24) {
  if (!(radius > 0.0)) throw DomainError("sphere_quadrature: radius must be positive");
  std::vector<double> terms;
  if (n == 2) {
    const int m = std::max(order, 4);
    const double dphi = 2.0 * std::numbers::pi / m;
    for (int k = 0; k < m; ++k) {
      const double phi = (k + 0.5) * dphi;
      Point nu{std::cos(phi), std::sin(phi), 0.0, 0.0};
      Point x{radius * nu[0], radius * nu[1], 0.0, 0.0};
      terms.push_back(integrand(x, nu) * dphi * radius);
    }
  } else if (n == 3) {
    const GaussRule rule = gauss_legendre(order);
    const int m = 2 * order;
    const double dphi = 2.0 * std::numbers::pi / m;
    for (int i = 0; i < order; ++i) {
      const double ct = rule.nodes[i];
      const double st = std::sqrt(1.0 - ct * ct);
      for (int k = 0; k < m; ++k) {
        const double phi = (k + 0.5) * dphi;
        Point nu{st * std::cos(phi), st * std::sin(phi), ct, 0.0};
        Point x{radius * nu[0], radius * nu[1], radius * nu[2], 0.0};
        terms.push_back(integrand(x, nu) * rule.weights[i] * dphi * radius * radius);
      }
    }
  } else if (n == 4) {
    // S^3 = (cos w, sin w S^2), Gauss-Legendre in w on [0, pi] with weight sin^2 w
    const GaussRule rw = gauss_legendre(order);
    const GaussRule rule = gauss_legendre(order);
    const int m = 2 * order;
    const double dphi = 2.0 * std::numbers::pi / m;
    for (int a = 0; a < order; ++a) {
      const double om = 0.5 * std::numbers::pi * (rw.nodes[a] + 1.0);
      const double so = std::sin(om), co = std::cos(om);
      const double wa = 0.5 * std::numbers::pi * rw.weights[a] * so * so;
      for (int i = 0; i < order; ++i) {
        const double ct = rule.nodes[i];
        const double st = std::sqrt(1.0 - ct * ct);
        for (int k = 0; k < m; ++k) {
          const double phi = (k + 0.5) * dphi;
          Point nu{so * st * std::cos(phi), so * st * std::sin(phi), so * ct, co};
          Point x{radius * nu[0], radius * nu[1], radius * nu[2], radius * nu[3]};
          terms.push_back(integrand(x, nu) * wa * rule.weights[i] * dphi * radius * radius * radius);
        }
      }
    }
  } else {
    throw DomainError("sphere_quadrature: unsupported dimension " + std::to_string(n));
  }
  return pairwise_sum(terms);
}

}  // namespace scglue
