#pragma once
// Delaunay ends. Orbits of u'' - ((n-2)^2/4) u + (n(n-2)/4) u^{(n+2)/(n-2)} = 0,
// the arclength form dx^2 + e^{2f(x)} h, rotationally reduced geometry of
// a dx^2 + B h (h the round metric on S^{n-1}), the static potential, and a
// 1-D gluing of a warped end to the Delaunay model on one period window.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/toms748_solve.hpp>
#include <boost/numeric/odeint.hpp>

#include "scglue/dual.hpp"
#include "scglue/errors.hpp"
#include "scglue/gluing.hpp"
#include "scglue/io.hpp"
#include "scglue/models.hpp"
#include "scglue/quadrature.hpp"
#include "scglue/weights.hpp"

namespace scglue {

inline double cylinder_value(int n) { return std::pow((n - 2.0) / n, (n - 2.0) / 4.0); }
/// The larger neck bound ((n-2)/2)^{(n-2)/4}; kept as configuration metadata.
inline double neck_bound(int n) { return std::pow((n - 2.0) / 2.0, (n - 2.0) / 4.0); }

namespace detail {

struct DelaunayEq {
  int n;
  double p, q, c1, c2;
  explicit DelaunayEq(int n_) : n(n_) {
    if (n < 3) throw DomainError("delaunay: requires n >= 3");
    p = 2.0 / (n - 2.0);
    q = (n + 2.0) / (n - 2.0);
    c1 = 0.25 * (n - 2.0) * (n - 2.0);
    c2 = 0.25 * n * (n - 2.0);
  }
  double uyy(double u) const { return c1 * u - c2 * std::pow(u, q); }
  double energy(double u, double v) const {
    return 0.5 * v * v - 0.125 * (n - 2.0) * (n - 2.0) * (u * u - std::pow(u, 2.0 * n / (n - 2.0)));
  }
};

using YState = std::array<double, 3>;  // u, u_y, x
using XState = std::array<double, 5>;  // u, u_y, y, N, N_x

inline void check_state(double u) {
  if (!(u > 0.0) || !std::isfinite(u) || u > 1e6) throw SolverError("delaunay: orbit left the admissible range");
}

struct YSystem {
  DelaunayEq eq;
  void operator()(const YState& s, YState& d, double) const {
    check_state(s[0]);
    d[0] = s[1];
    d[1] = eq.uyy(s[0]);
    d[2] = std::pow(s[0], eq.p);
  }
};

/// Same orbit in the arclength variable, carrying the static potential ODE
/// N'' = -(k-1) w' N' + N (w'' + k w'^2 - (k-1) e^{-2w}), w = p log u, k = n - 1.
struct XSystem {
  DelaunayEq eq;
  void operator()(const XState& s, XState& d, double) const {
    const double u = s[0], v = s[1];
    check_state(u);
    const double k = eq.n - 1.0, p = eq.p;
    const double up = std::pow(u, -p);
    const double a = eq.uyy(u);
    const double wx = p * v * up / u;
    const double wxx = p * up * (a * up / u - (p + 1.0) * v * v * up / (u * u));
    const double e2w = std::pow(u, -2.0 * p);
    d[0] = v * up;
    d[1] = a * up;
    d[2] = up;
    d[3] = s[4];
    d[4] = -(k - 1.0) * wx * s[4] + s[3] * (wxx + k * wx * wx - (k - 1.0) * e2w);
  }
};

template <class State>
auto controlled(double tol) {
  using namespace boost::numeric::odeint;
  return make_controlled(tol, tol, runge_kutta_fehlberg78<State>());
}

inline void validate_neck(int n, double eps) {
  if (!(eps > 0.0)) throw DomainError("delaunay: neck size must be positive");
  if (eps > cylinder_value(n) * (1.0 + 1e-12))
    throw DomainError("delaunay: neck size " + format_double(eps) + " exceeds the cylinder value " +
                      format_double(cylinder_value(n)));
}

inline bool is_cylinder(int n, double eps) { return std::abs(eps - cylinder_value(n)) <= 1e-12 * cylinder_value(n); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Orbits

struct PeriodResult {
  double T = 0.0;        ///< period in y
  double T_x = 0.0;      ///< period in arclength x
  double u_max = 0.0;
  bool degenerate = false;
};

/// First return of (u, u') to (eps, 0).
inline PeriodResult period(int n, double eps, double tol = 1e-13) {
  const detail::DelaunayEq eq(n);
  detail::validate_neck(n, eps);
  PeriodResult out;
  if (detail::is_cylinder(n, eps)) {
    out.degenerate = true;
    out.T = 2.0 * std::numbers::pi / std::sqrt(n - 2.0);
    out.T_x = out.T * std::pow(eps, eq.p);
    out.u_max = eps;
    return out;
  }
  using namespace boost::numeric::odeint;
  detail::YSystem sys{eq};
  auto stepper = detail::controlled<detail::YState>(tol);
  detail::YState s{eps, 0.0, 0.0};
  double t = 0.0, dt = 1e-3;
  bool descending = false;
  const double span = 200.0;
  for (;;) {
    const detail::YState prev = s;
    const double tprev = t;
    while (stepper.try_step(sys, s, t, dt) == fail) {
    }
    if (s[1] < 0.0) descending = true;
    if (descending && s[1] >= 0.0) {
      // Newton on u'(t) = 0 from the last accepted state
      double tc = tprev + (t - tprev) * (-prev[1]) / (s[1] - prev[1]);
      detail::YState at{};
      for (int it = 0; it < 8; ++it) {
        at = prev;
        if (tc > tprev) integrate_adaptive(detail::controlled<detail::YState>(tol), sys, at, tprev, tc, (tc - tprev) / 4);
        const double step = at[1] / eq.uyy(at[0]);
        tc -= step;
        if (std::abs(step) <= 1e-15 * tc) break;
      }
      at = prev;
      integrate_adaptive(detail::controlled<detail::YState>(tol), sys, at, tprev, tc, (tc - tprev) / 4);
      out.T = tc;
      out.T_x = at[2];
      detail::YState half{eps, 0.0, 0.0};
      integrate_adaptive(detail::controlled<detail::YState>(tol), sys, half, 0.0, 0.5 * tc, 1e-3);
      out.u_max = half[0];
      return out;
    }
    if (t > span) throw SolverError("period: no return within y <= " + format_double(span));
  }
}

struct DelaunayOrbit {
  int n = 3;
  double eps = 0.0;
  std::vector<double> y, u, up, energy;
  double T = 0.0, T_x = 0.0;
  double E = 0.0;
  double energy_drift = 0.0;  ///< max |E(y) - E(0)| over the samples
  double u_max = 0.0;
  bool degenerate = false;
  double sigma = 0.0;  ///< cutoff offset: argmax |N| over one period in x

  std::string csv() const {
    CsvWriter w({"y", "u", "du", "E"});
    for (std::size_t i = 0; i < y.size(); ++i) w.row(std::vector<double>{y[i], u[i], up[i], energy[i]});
    return w.str();
  }
};

struct ProfileSamples {
  std::vector<double> x, u, v, y, N, Nx;
};

/// Arclength samples of the Delaunay orbit with neck at x = 0, at any x
/// (u even, y and N odd in x). N is unnormalized with N(0) = 0, N'(0) = 1.
inline ProfileSamples delaunay_samples(int n, double eps, const std::vector<double>& xs, double tol = 1e-13) {
  const detail::DelaunayEq eq(n);
  detail::validate_neck(n, eps);
  ProfileSamples out;
  out.x = xs;
  const std::size_t m = xs.size();
  out.u.resize(m);
  out.v.resize(m);
  out.y.resize(m);
  out.N.resize(m);
  out.Nx.resize(m);
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(xs[a]) < std::abs(xs[b]); });
  std::vector<double> times{0.0};
  for (auto i : order) times.push_back(std::abs(xs[i]));
  std::vector<detail::XState> states;
  detail::XState s{eps, 0.0, 0.0, 0.0, 1.0};
  using namespace boost::numeric::odeint;
  integrate_times(detail::controlled<detail::XState>(tol), detail::XSystem{eq}, s, times.begin(), times.end(), 1e-3,
                  [&](const detail::XState& st, double) { states.push_back(st); });
  for (std::size_t k = 0; k < m; ++k) {
    const auto i = order[k];
    const auto& st = states[k + 1];
    const double sg = xs[i] < 0.0 ? -1.0 : 1.0;
    out.u[i] = st[0];
    out.v[i] = sg * st[1];
    out.y[i] = sg * st[2];
    out.N[i] = sg * st[3];
    out.Nx[i] = st[4];
  }
  return out;
}

/// Maximum of |N| over one period and its location, from `samples` points.
inline std::pair<double, double> static_potential_peak(int n, double eps, double T_x, int samples = 4096) {
  std::vector<double> xs(samples);
  for (int i = 0; i < samples; ++i) xs[i] = T_x * i / samples;
  const auto pr = delaunay_samples(n, eps, xs);
  double best = 0.0, at = 0.0;
  for (int i = 0; i < samples; ++i)
    if (std::abs(pr.N[i]) > best) {
      best = std::abs(pr.N[i]);
      at = xs[i];
    }
  return {best, at};
}

inline DelaunayOrbit ode_solve(int n, double eps, double y_span, double step_tol = 1e-13, int samples = 2001) {
  const detail::DelaunayEq eq(n);
  detail::validate_neck(n, eps);
  if (!(y_span > 0.0) || samples < 2) throw DomainError("ode_solve: need a positive span and >= 2 samples");
  DelaunayOrbit o;
  o.n = n;
  o.eps = eps;
  const auto pr = period(n, eps, step_tol);
  o.T = pr.T;
  o.T_x = pr.T_x;
  o.degenerate = pr.degenerate;
  o.u_max = pr.u_max;
  std::vector<double> ys(samples);
  for (int i = 0; i < samples; ++i) ys[i] = y_span * i / (samples - 1);
  o.E = eq.energy(eps, 0.0);
  if (o.degenerate) {
    // exact constant solution
    for (double y : ys) {
      o.y.push_back(y);
      o.u.push_back(eps);
      o.up.push_back(0.0);
      o.energy.push_back(o.E);
    }
    o.sigma = 0.25 * o.T_x;
    return o;
  }
  using namespace boost::numeric::odeint;
  detail::YState s{eps, 0.0, 0.0};
  integrate_times(detail::controlled<detail::YState>(step_tol), detail::YSystem{eq}, s, ys.begin(), ys.end(), 1e-3,
                  [&](const detail::YState& st, double y) {
                    o.y.push_back(y);
                    o.u.push_back(st[0]);
                    o.up.push_back(st[1]);
                    const double e = eq.energy(st[0], st[1]);
                    o.energy.push_back(e);
                    o.energy_drift = std::max(o.energy_drift, std::abs(e - o.E));
                  });
  o.sigma = static_potential_peak(n, eps, o.T_x).second;
  return o;
}

/// Phase-space return error |u(T) - eps| + |u'(T)|.
inline double return_error(const DelaunayOrbit& o, double tol = 1e-13) {
  if (o.degenerate) return 0.0;
  using namespace boost::numeric::odeint;
  detail::YState s{o.eps, 0.0, 0.0};
  integrate_adaptive(detail::controlled<detail::YState>(tol), detail::YSystem{detail::DelaunayEq(o.n)}, s, 0.0, o.T,
                     1e-3);
  return std::max(std::abs(s[0] - o.eps), std::abs(s[1]));
}

// ---------------------------------------------------------------------------
// Reduced geometry on a uniform 1-D grid

/// Rotationally invariant symmetric 2-tensor a dx^2 + b e^{2w} h.
struct WarpedField {
  std::vector<double> x;
  std::vector<double> a, b, w;

  std::size_t size() const { return x.size(); }
  double spacing() const { return x.size() > 1 ? x[1] - x[0] : 0.0; }
  /// log sqrt of the sphere coefficient, W = w + log(b)/2.
  std::vector<double> W() const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = w[i] + 0.5 * std::log(b[i]);
    return out;
  }
  void validate_metric() const {
    for (std::size_t i = 0; i < size(); ++i)
      if (!(a[i] > 0.0) || !(b[i] > 0.0)) throw DomainError("warped field: metric coefficients must be positive");
  }
};

inline std::vector<double> uniform_nodes(double x0, double x1, std::size_t count) {
  if (count < 6 || !(x1 > x0)) throw DomainError("uniform_nodes: need >= 6 nodes on a nonempty interval");
  std::vector<double> xs(count);
  for (std::size_t i = 0; i < count; ++i) xs[i] = x0 + (x1 - x0) * static_cast<double>(i) / (count - 1);
  return xs;
}

namespace detail {
// Sixth-order central differences; fourth order within three nodes of an end
// unless the samples are periodic.
template <class T>
T fd1(const std::vector<T>& f, std::size_t j, double h, bool periodic = false) {
  const long m = static_cast<long>(f.size());
  const long jj = static_cast<long>(j);
  if (periodic || (jj >= 3 && jj + 3 < m)) {
    const auto at = [&](long k) -> const T& { return f[static_cast<std::size_t>((jj + k + 2 * m) % m)]; };
    return (-at(-3) + 9.0 * at(-2) - 45.0 * at(-1) + 45.0 * at(1) - 9.0 * at(2) + at(3)) / (60.0 * h);
  }
  const std::size_t M = f.size();
  if (jj == 2 || jj == m - 3) return (f[j - 2] - 8.0 * f[j - 1] + 8.0 * f[j + 1] - f[j + 2]) / (12.0 * h);
  if (j == 0) return (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * h);
  if (j == 1) return (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * h);
  if (j == M - 1)
    return (25.0 * f[M - 1] - 48.0 * f[M - 2] + 36.0 * f[M - 3] - 16.0 * f[M - 4] + 3.0 * f[M - 5]) / (12.0 * h);
  return (3.0 * f[M - 1] + 10.0 * f[M - 2] - 18.0 * f[M - 3] + 6.0 * f[M - 4] - f[M - 5]) / (12.0 * h);
}
template <class T>
T fd2(const std::vector<T>& f, std::size_t j, double h, bool periodic = false) {
  const long m = static_cast<long>(f.size());
  const long jj = static_cast<long>(j);
  if (periodic || (jj >= 3 && jj + 3 < m)) {
    const auto at = [&](long k) -> const T& { return f[static_cast<std::size_t>((jj + k + 2 * m) % m)]; };
    return (2.0 * at(-3) - 27.0 * at(-2) + 270.0 * at(-1) - 490.0 * at(0) + 270.0 * at(1) - 27.0 * at(2) +
            2.0 * at(3)) /
           (180.0 * h * h);
  }
  const double h2 = 12.0 * h * h;
  if (jj == 2 || jj == m - 3)
    return (-f[j - 2] + 16.0 * f[j - 1] - 30.0 * f[j] + 16.0 * f[j + 1] - f[j + 2]) / h2;
  // mirrored one-sided stencils; at(k) walks inward from the nearest end
  const bool left = jj < 2;
  const std::size_t M = f.size();
  const auto at = [&](std::size_t k) -> const T& { return left ? f[k] : f[M - 1 - k]; };
  if (jj == 0 || jj == m - 1)
    return (45.0 * at(0) - 154.0 * at(1) + 214.0 * at(2) - 156.0 * at(3) + 61.0 * at(4) - 10.0 * at(5)) / h2;
  return (10.0 * at(0) - 15.0 * at(1) - 4.0 * at(2) + 14.0 * at(3) - 6.0 * at(4) + at(5)) / h2;
}
}  // namespace detail

/// R of A dx^2 + e^{2W} h on S^{n-1}:
///   -2k (W''/A - W'A'/(2A^2)) - k(k+1) W'^2/A + k(k-1) e^{-2W},  k = n - 1.
template <class T>
std::vector<T> reduced_scalar_curvature(const std::vector<T>& A, const std::vector<T>& W, double h, int n,
                                        bool periodic = false) {
  using std::exp;
  const double k = n - 1.0;
  std::vector<T> R(A.size());
  for (std::size_t j = 0; j < A.size(); ++j) {
    const T Ax = detail::fd1(A, j, h, periodic), Wx = detail::fd1(W, j, h, periodic),
            Wxx = detail::fd2(W, j, h, periodic);
    const T& a = A[j];
    R[j] = -2.0 * k * (Wxx / a - Wx * Ax / (2.0 * a * a)) - k * (k + 1.0) * Wx * Wx / a +
           k * (k - 1.0) * exp(-2.0 * W[j]);
  }
  return R;
}

/// Reduced geometry of the metric A dx^2 + e^{2W} h on a uniform grid.
class WarpedGeometry {
 public:
  /// periodic: the samples cover one period [x0, x0 + m h) and differences wrap.
  WarpedGeometry(std::vector<double> A, std::vector<double> W, double h, int n, bool periodic = false)
      : A_(std::move(A)), W_(std::move(W)), h_(h), n_(n), periodic_(periodic) {
    if (A_.size() != W_.size() || A_.size() < 6) throw DomainError("warped geometry: need >= 6 matching samples");
    R_ = reduced_scalar_curvature(A_, W_, h_, n_, periodic_);
  }
  static WarpedGeometry from_warp(const std::vector<double>& w, double h, int n, bool periodic = false) {
    return WarpedGeometry(std::vector<double>(w.size(), 1.0), w, h, n, periodic);
  }

  const std::vector<double>& R() const { return R_; }
  const std::vector<double>& A() const { return A_; }
  const std::vector<double>& W() const { return W_; }
  double spacing() const { return h_; }
  int dim() const { return n_; }
  std::size_t size() const { return A_.size(); }

  /// Exact linearization of the discrete R in the direction a dx^2 + b e^{2W} h.
  std::vector<double> P(const std::vector<double>& a, const std::vector<double>& b) const {
    std::vector<Dual<double>> Ad(size()), Wd(size());
    for (std::size_t j = 0; j < size(); ++j) {
      Ad[j] = Dual<double>(A_[j], a[j]);
      Wd[j] = Dual<double>(W_[j], 0.5 * b[j]);
    }
    const auto Rd = reduced_scalar_curvature(Ad, Wd, h_, n_, periodic_);
    std::vector<double> out(size());
    for (std::size_t j = 0; j < size(); ++j) out[j] = Rd[j].d;
    return out;
  }

  /// P* u = -(lap u) g + Hess u - u Ric as (a, b) components.
  std::pair<std::vector<double>, std::vector<double>> Pstar(const std::vector<double>& u) const {
    const double k = n_ - 1.0;
    std::vector<double> a(size()), b(size());
    for (std::size_t j = 0; j < size(); ++j) {
      const bool pr = periodic_;
      const double A = A_[j], sA = std::sqrt(A), Ax = detail::fd1(A_, j, h_, pr);
      const double ux = detail::fd1(u, j, h_, pr), uxx = detail::fd2(u, j, h_, pr);
      const double Wx = detail::fd1(W_, j, h_, pr), Wxx = detail::fd2(W_, j, h_, pr);
      const double us = ux / sA, uss = uxx / A - ux * Ax / (2.0 * A * A);
      const double Ws = Wx / sA, Wss = Wxx / A - Wx * Ax / (2.0 * A * A);
      const double e2 = std::exp(-2.0 * W_[j]);
      a[j] = A * (-k * Ws * us + k * u[j] * (Wss + Ws * Ws));
      b[j] = -uss - (k - 1.0) * Ws * us + u[j] * (Wss + k * Ws * Ws - (k - 1.0) * e2);
    }
    return {a, b};
  }

  /// Riemannian measure density per dx (including the sphere area).
  double density(std::size_t j) const {
    return unit_sphere_area(n_) * std::sqrt(A_[j]) * std::exp((n_ - 1.0) * W_[j]);
  }

  /// Pointwise <h, k>_g for rotationally invariant tensors in (a, b) form.
  double pair(std::size_t j, double a1, double b1, double a2, double b2) const {
    return a1 * a2 / (A_[j] * A_[j]) + (n_ - 1.0) * b1 * b2;
  }

  /// L u = psi^-2 P(psi^2 phi^4 P* u).
  std::vector<double> L(const std::vector<double>& u, const std::vector<double>& psi,
                        const std::vector<double>& phi) const {
    auto [a, b] = Pstar(u);
    for (std::size_t j = 0; j < size(); ++j) {
      const double m = psi[j] * psi[j] * std::pow(phi[j], 4);
      a[j] *= m;
      b[j] *= m;
    }
    auto out = P(a, b);
    for (std::size_t j = 0; j < size(); ++j) out[j] = psi[j] > 0.0 ? out[j] / (psi[j] * psi[j]) : 0.0;
    return out;
  }

 private:
  std::vector<double> A_, W_, R_;
  double h_;
  int n_;
  bool periodic_ = false;
};

inline WarpedGeometry warped_geometry(const std::vector<double>& w, double h, int n, bool periodic = false) {
  return WarpedGeometry::from_warp(w, h, n, periodic);
}

/// Exact R for a warp given with its first two derivatives (A = 1).
inline double warped_scalar_curvature(int n, double w, double wx, double wxx) {
  const double k = n - 1.0;
  return -2.0 * k * wxx - k * (k + 1.0) * wx * wx + k * (k - 1.0) * std::exp(-2.0 * w);
}

struct ArclengthForm {
  std::vector<double> x, f, y, u;
  double T_x = 0.0;
  double spacing() const { return T_x / static_cast<double>(x.size()); }
};

inline std::vector<double> period_nodes(double x0, double T, int nodes) {
  if (nodes < 6 || !(T > 0.0)) throw DomainError("period_nodes: need >= 6 nodes and a positive period");
  std::vector<double> xs(static_cast<std::size_t>(nodes));
  for (int i = 0; i < nodes; ++i) xs[static_cast<std::size_t>(i)] = x0 + T * i / nodes;
  return xs;
}

/// dx = u^{2/(n-2)} dy, e^f = u^{2/(n-2)}, sampled at `nodes` points of one period [x0, x0 + T_x).
inline ArclengthForm arclength_form(const DelaunayOrbit& o, int nodes = 1024, double x0 = 0.0) {
  ArclengthForm out;
  out.T_x = o.T_x;
  out.x = period_nodes(x0, o.T_x, nodes);
  const double p = 2.0 / (o.n - 2.0);
  if (o.degenerate) {
    for (double x : out.x) {
      out.f.push_back(p * std::log(o.eps));
      out.y.push_back(x / std::pow(o.eps, p));
      out.u.push_back(o.eps);
    }
    return out;
  }
  const auto s = delaunay_samples(o.n, o.eps, out.x);
  out.y = s.y;
  out.u = s.u;
  for (double u : s.u) out.f.push_back(p * std::log(u));
  return out;
}

struct StaticPotential {
  std::vector<double> x, N;
  double scale = 1.0;     ///< max |N| over one period of the unnormalized solution
  double residual = 0.0;  ///< max |reduced P* N| on the interior nodes
  double lambda = 0.0;    ///< 4 omega (n-1) N(sigma)
};

/// N with P* N = 0 for the Delaunay metric, max-normalized over one period.
inline StaticPotential static_potential(const DelaunayOrbit& o, int nodes = 1024, double check_tol = 1e-6) {
  StaticPotential sp;
  sp.x = period_nodes(0.0, o.T_x, nodes);
  std::vector<double> f;
  const double p = 2.0 / (o.n - 2.0);
  if (o.degenerate) {
    // constant coefficients: N'' = -(n-2) e^{-2f} N
    const double om = std::sqrt(o.n - 2.0) * std::pow(o.eps, -p);
    for (double x : sp.x) {
      sp.N.push_back(std::sin(om * x));
      f.push_back(p * std::log(o.eps));
    }
    sp.scale = 1.0 / om;
  } else {
    const auto s = delaunay_samples(o.n, o.eps, sp.x);
    sp.scale = static_potential_peak(o.n, o.eps, o.T_x).first;
    for (std::size_t i = 0; i < sp.x.size(); ++i) {
      sp.N.push_back(s.N[i] / sp.scale);
      f.push_back(p * std::log(s.u[i]));
    }
  }
  const auto geo = warped_geometry(f, sp.x[1] - sp.x[0], o.n, true);
  const auto [a, b] = geo.Pstar(sp.N);
  for (std::size_t j = 0; j < sp.x.size(); ++j) sp.residual = std::max({sp.residual, std::abs(a[j]), std::abs(b[j])});
  if (!(sp.residual <= check_tol))
    throw SolverError("static_potential: residual " + format_double(sp.residual) + " exceeds " +
                      format_double(check_tol));
  const double at = o.degenerate ? o.sigma : o.sigma;
  const auto ns = o.degenerate ? std::vector<double>{std::sin(std::sqrt(o.n - 2.0) * std::pow(o.eps, -p) * at)}
                               : delaunay_samples(o.n, o.eps, {at}).N;
  sp.lambda = 4.0 * unit_sphere_area(o.n) * (o.n - 1.0) * (o.degenerate ? ns[0] : ns[0] / sp.scale);
  return sp;
}

/// Two-backend comparison on rotationally invariant data: max over active
/// nodes of |R from the cartesian backend - reduced R| for the warped model
/// dr^2 + rho^2 h, rho = r (1 + amp sin(freq r)), with exact reduced derivatives.
/// Only nodes with r_lo <= |x| <= r_hi count.
inline double warped_backend_discrepancy(const MetricSpec& spec, const GridPtr& grid, double r_lo = 0.0,
                                         double r_hi = std::numeric_limits<double>::infinity()) {
  if (spec.kind != ModelKind::warped) throw DomainError("backend check: needs a warped model spec");
  const auto R3 = scalar_curvature(sample(spec, grid));
  double worst = 0.0;
  for (auto i : grid->active_nodes()) {
    using DD = Dual<Dual<double>>;
    if (grid->radius(i) < r_lo || grid->radius(i) > r_hi) continue;
    const double r = grid->radius(i) * spec.scale;
    const DD rr(Dual<double>(r, 1.0), Dual<double>(1.0, 0.0));
    const DD w = log(rr * (DD(1.0) + spec.amp * sin(spec.freq * rr)));
    const double ref = spec.scale * spec.scale * warped_scalar_curvature(spec.n, w.v.v, w.v.d, w.d.d);
    worst = std::max(worst, std::abs(R3(i) - ref));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// 1-D Delaunay end gluing

/// Warped metric data as a function of the sampling nodes.
using WarpedSource = std::function<WarpedField(const std::vector<double>& xs)>;

inline WarpedField delaunay_field(int n, double eps, const std::vector<double>& xs) {
  WarpedField f;
  f.x = xs;
  f.a.assign(xs.size(), 1.0);
  f.b.assign(xs.size(), 1.0);
  const double p = 2.0 / (n - 2.0);
  if (detail::is_cylinder(n, eps)) {
    f.w.assign(xs.size(), p * std::log(eps));
    return f;
  }
  const auto s = delaunay_samples(n, eps, xs);
  for (double u : s.u) f.w.push_back(p * std::log(u));
  return f;
}

inline WarpedSource delaunay_source(int n, double eps) {
  return [n, eps](const std::vector<double>& xs) { return delaunay_field(n, eps, xs); };
}

/// Delaunay metric times (1 + amp e^{-x/decay}) in both components.
inline WarpedSource perturbed_delaunay_source(int n, double eps, double amp, double decay) {
  if (!(decay > 0.0)) throw DomainError("perturbed delaunay: decay length must be positive");
  return [=](const std::vector<double>& xs) {
    auto f = delaunay_field(n, eps, xs);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double d = 1.0 + amp * std::exp(-xs[i] / decay);
      f.a[i] = d;
      f.b[i] = d;
    }
    return f;
  };
}

struct DelaunayGlueControls {
  int window = 1;
  int nodes = 401;  ///< nodes across the window
  double sigma = std::numeric_limits<double>::quiet_NaN();  ///< NaN selects argmax |N|
  double cut_start = 1.0 / 3.0, cut_end = 2.0 / 3.0;        ///< transition as fractions of the window
  WeightSpec weights = WeightSpec::defaults(3);
  double psi_floor = 1e-4;  ///< psi below this fraction of its maximum is clamped to zero
  int newton_max = 12;
  double newton_tol = 1e-10;
  double floor_tol = 1e-6;  ///< stagnation below this counts as the roundoff floor
  double q_tol = 1e-8;
  double bracket_step = 1e-3;  ///< relative to eps
  int bracket_max = 30;
  int root_max = 60;

  void validate() const {
    if (window < 0) throw ConfigError("delaunay glue: window index must be >= 0");
    if (nodes < 21) throw ConfigError("delaunay glue: need at least 21 nodes");
    if (!(psi_floor >= 0.0 && psi_floor < 1.0)) throw ConfigError("delaunay glue: psi_floor must lie in [0, 1)");
    if (!(0.0 < cut_start && cut_start < cut_end && cut_end < 1.0))
      throw ConfigError("delaunay glue: need 0 < cut_start < cut_end < 1");
    if (newton_max < 1 || !(newton_tol > 0.0) || !(q_tol > 0.0) || !(bracket_step > 0.0) || bracket_max < 1 ||
        root_max < 1)
      throw ConfigError("delaunay glue: bad solver controls");
    weights.validate();
  }
};

struct DelaunayInner {
  double eps_prime = 0.0;
  double q = 0.0;
  double weighted_residual = 0.0;
  double kernel_component_projected = 0.0;  ///< N-component of the projected residual
  double collar_residual = 0.0;
  double support_certificate = 0.0;
  int iterations = 0;
  bool converged = false;
  bool floor_limited = false;  ///< stopped on stagnation at the roundoff floor
  std::vector<double> history;  ///< projected weighted residual per Newton step
  std::vector<double> x, chi, psi, A, W, R, R_chi, R_input, N, ha, hb;
};

struct DelaunayTraceRow {
  int evaluation = 0;
  double eps_prime = 0.0, q = 0.0, residual = 0.0;
  int newton = 0;
};

struct DelaunayGlueReport {
  int n = 3;
  double eps = 0.0, eps_prime = 0.0, q = 0.0;
  double window_start = 0.0, window_end = 0.0, sigma = 0.0;
  bool converged = false;
  std::string message;
  std::vector<DelaunayTraceRow> trace;
  std::vector<std::pair<double, double>> bracket_history;  ///< (eps', q) during expansion
  DelaunayInner inner;

  std::string csv() const {
    CsvWriter w({"iteration", "residual", "q", "eps_prime", "newton"});
    for (const auto& r : trace)
      w.row(std::vector<std::string>{std::to_string(r.evaluation), format_double(r.residual), format_double(r.q),
                                     format_double(r.eps_prime), std::to_string(r.newton)});
    return w.str();
  }
  std::string profile_csv() const {
    CsvWriter w({"x", "chi", "A", "W", "R", "R_chi", "h_a", "h_b", "N"});
    for (std::size_t i = 0; i < inner.x.size(); ++i)
      w.row(std::vector<double>{inner.x[i], inner.chi[i], inner.A[i], inner.W[i], inner.R[i], inner.R_chi[i],
                                inner.ha[i], inner.hb[i], inner.N[i]});
    return w.str();
  }
};

/// Everything at fixed eps and window; evaluates q(eps') by a projected Newton solve.
class DelaunayGlueContext {
 public:
  static constexpr int kGhost = 4;

  DelaunayGlueContext(int n, double eps, WarpedSource source, DelaunayGlueControls ctl)
      : n_(n), eps_(eps), source_(std::move(source)), ctl_(ctl) {
    ctl_.validate();
    detail::validate_neck(n, eps);
    if (detail::is_cylinder(n, eps)) throw HypothesisError("delaunay glue: the cylinder is not a gluing target");
    const auto pr = period(n, eps);
    T_x_ = pr.T_x;
    sigma_ = std::isnan(ctl_.sigma) ? static_potential_peak(n, eps, T_x_).second : ctl_.sigma;
    xa_ = ctl_.window * T_x_ + sigma_;
    xb_ = xa_ + T_x_;
    h_ = T_x_ / (ctl_.nodes - 1);
    for (int j = -kGhost; j < ctl_.nodes + kGhost; ++j) x_.push_back(xa_ + j * h_);
    input_ = source_(x_);
    if (input_.size() != x_.size()) throw DomainError("delaunay glue: source returned the wrong number of samples");
    input_.validate_metric();
    const double k = ctl_.weights.smoothing > 0.0 ? ctl_.weights.smoothing : 2.0 * h_;
    for (double x : x_) {
      const double d = std::max(smooth_min(x - xa_, xb_ - x, k), 0.0);
      const auto wv = weights_at(d, n, ctl_.weights);
      const bool inside = x > xa_ + 0.5 * h_ && x < xb_ - 0.5 * h_;
      psi_.push_back(inside ? wv.psi : 0.0);
      phi_.push_back(wv.phi);
      const double c1 = xa_ + ctl_.cut_start * T_x_, c2 = xa_ + ctl_.cut_end * T_x_;
      chi_.push_back(cutoff_profile((x - c1) / (c2 - c1)));
    }
    const double pmax = *std::max_element(psi_.begin(), psi_.end());
    for (auto& p : psi_)
      if (p < ctl_.psi_floor * pmax) p = 0.0;
    for (std::size_t j = 0; j < x_.size(); ++j)
      if (psi_[j] > 0.0) S_.push_back(j);
    if (S_.size() < 8) throw DomainError("delaunay glue: too few weighted nodes in the window");
    A_in_ = input_.a;
    W_in_ = input_.W();
    R_in_ = reduced_scalar_curvature(A_in_, W_in_, h_, n_);
  }

  double window_start() const { return xa_; }
  double window_end() const { return xb_; }
  double sigma() const { return sigma_; }
  double period_x() const { return T_x_; }

  DelaunayInner evaluate(double eps_prime) const {
    detail::validate_neck(n_, eps_prime);
    const std::size_t m = x_.size();
    DelaunayInner out;
    out.eps_prime = eps_prime;
    const auto model = delaunay_field(n_, eps_prime, x_);
    const auto Wd = model.W();
    const auto Rd = reduced_scalar_curvature(model.a, Wd, h_, n_);
    std::vector<double> N(m);
    {
      const auto s = delaunay_samples(n_, eps_prime, x_);
      const double sc = static_potential_peak(n_, eps_prime, period(n_, eps_prime).T_x).first;
      for (std::size_t j = 0; j < m; ++j) N[j] = s.N[j] / sc;
    }
    // blend of g and the model; exact where the inputs agree
    std::vector<double> A(m), B(m), Rchi(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double c = chi_[j];
      const bool same = A_in_[j] == model.a[j] && W_in_[j] == Wd[j];
      A[j] = same ? A_in_[j] : c * A_in_[j] + (1.0 - c) * model.a[j];
      B[j] = same ? std::exp(2.0 * W_in_[j]) : c * std::exp(2.0 * W_in_[j]) + (1.0 - c) * std::exp(2.0 * Wd[j]);
      Rchi[j] = R_in_[j] == Rd[j] ? R_in_[j] : c * R_in_[j] + (1.0 - c) * Rd[j];
    }
    std::vector<double> W0(m);
    for (std::size_t j = 0; j < m; ++j) {
      const bool same = A_in_[j] == model.a[j] && W_in_[j] == Wd[j];
      if (same || chi_[j] == 1.0) W0[j] = W_in_[j];
      else if (chi_[j] == 0.0) W0[j] = Wd[j];
      else W0[j] = 0.5 * std::log(B[j]);
    }
    std::vector<double> ha(m, 0.0), hB(m, 0.0);
    std::vector<double> mult(m);
    for (std::size_t j = 0; j < m; ++j) mult[j] = psi_[j] * psi_[j] * std::pow(phi_[j], 4);

    const std::size_t ns = S_.size();
    const auto metric_now = [&](std::vector<double>& At, std::vector<double>& Wt) {
      At.resize(m);
      Wt.resize(m);
      for (std::size_t j = 0; j < m; ++j) {
        At[j] = A[j] + ha[j];
        if (!(At[j] > 0.0) || !(B[j] + hB[j] > 0.0)) throw SolverError("delaunay glue: metric degeneration");
        Wt[j] = W0[j] + 0.5 * std::log1p(hB[j] / B[j]);
      }
    };
    std::vector<double> At, Wt;
    for (int it = 0;; ++it) {
      metric_now(At, Wt);
      const WarpedGeometry geo(At, Wt, h_, n_);
      const auto& R = geo.R();
      // residual and its L^2_psi(g~) split along N
      Eigen::VectorXd F(ns), Nv(ns), wts(ns);
      for (std::size_t s = 0; s < ns; ++s) {
        const auto j = S_[s];
        F[s] = (R[j] - Rchi[j]) / (psi_[j] * psi_[j]);
        Nv[s] = N[j];
        wts[s] = psi_[j] * psi_[j] * geo.density(j) * h_;
      }
      const double nn = (Nv.array() * Nv.array() * wts.array()).sum();
      const double fn = (F.array() * Nv.array() * wts.array()).sum();
      const Eigen::VectorXd pF = F - (fn / nn) * Nv;
      const double res = std::sqrt((pF.array() * pF.array() * wts.array()).sum());
      out.history.push_back(res);
      out.iterations = it;
      out.weighted_residual = res;
      out.kernel_component_projected = (pF.array() * Nv.array() * wts.array()).sum() / std::sqrt(nn);
      {
        double q = 0.0;
        for (std::size_t s = 0; s < ns; ++s) q += N[S_[s]] * (R[S_[s]] - Rchi[S_[s]]) * geo.density(S_[s]) * h_;
        out.q = q;
      }
      if (res <= ctl_.newton_tol) {
        out.converged = true;
        break;
      }
      if (it >= 2 && res <= ctl_.floor_tol && res > 0.25 * out.history[out.history.size() - 2]) {
        out.converged = true;
        out.floor_limited = true;
        break;
      }
      if (it >= ctl_.newton_max || !std::isfinite(res)) break;
      // bordered Newton system [psi^2 J, psi^2 N; (wN)^T, 0], Ruiz-equilibrated
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(ns + 1, ns + 1);
      std::vector<double> e(m, 0.0);
      for (std::size_t c = 0; c < ns; ++c) {
        const auto jc = S_[c];
        e[jc] = 1.0;
        auto [a, b] = geo.Pstar(e);
        e[jc] = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          a[j] *= mult[j];
          b[j] *= mult[j];
        }
        const auto col = geo.P(a, b);
        for (std::size_t r = 0; r < ns; ++r) K(r, c) = col[S_[r]];
        K(ns, c) = wts[c] * Nv[c];
        K(c, ns) = Nv[c] * psi_[jc] * psi_[jc];
      }
      Eigen::VectorXd dr = Eigen::VectorXd::Ones(ns + 1), dc = Eigen::VectorXd::Ones(ns + 1);
      for (int sweep = 0; sweep < 30; ++sweep) {
        const Eigen::VectorXd rm = K.cwiseAbs().rowwise().maxCoeff().cwiseSqrt();
        const Eigen::VectorXd cm = K.cwiseAbs().colwise().maxCoeff().transpose().cwiseSqrt();
        if ((rm.array() - 1.0).abs().maxCoeff() < 1e-3 && (cm.array() - 1.0).abs().maxCoeff() < 1e-3) break;
        K = rm.cwiseInverse().asDiagonal() * K * cm.cwiseInverse().asDiagonal();
        dr = dr.cwiseQuotient(rm);
        dc = dc.cwiseQuotient(cm);
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(ns + 1);
      for (std::size_t s = 0; s < ns; ++s) rhs[s] = -(R[S_[s]] - Rchi[S_[s]]);
      const Eigen::VectorXd sol = dc.cwiseProduct(K.partialPivLu().solve(dr.cwiseProduct(rhs)));
      std::vector<double> du(m, 0.0);
      for (std::size_t s = 0; s < ns; ++s) du[S_[s]] = sol[s];
      const auto [a, b] = geo.Pstar(du);
      for (std::size_t j = 0; j < m; ++j) {
        if (mult[j] == 0.0) continue;
        ha[j] += mult[j] * a[j];
        hB[j] += mult[j] * b[j] * std::exp(2.0 * Wt[j]);
      }
    }
    const WarpedGeometry fin(At, Wt, h_, n_);
    out.x = x_;
    out.chi = chi_;
    out.psi = psi_;
    out.A = At;
    out.W = Wt;
    out.R = fin.R();
    out.R_chi = Rchi;
    out.R_input = R_in_;
    out.N = N;
    out.ha = ha;
    out.hb.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      out.hb[j] = hB[j] / B[j];
      if (psi_[j] == 0.0) out.support_certificate = std::max({out.support_certificate, std::abs(ha[j]), std::abs(hB[j])});
      if (psi_[j] == 0.0 && x_[j] >= xa_ && x_[j] <= xb_)
        out.collar_residual = std::max(out.collar_residual, std::abs(out.R[j] - Rchi[j]));
    }
    return out;
  }

 private:
  int n_;
  double eps_;
  WarpedSource source_;
  DelaunayGlueControls ctl_;
  double T_x_ = 0.0, sigma_ = 0.0, xa_ = 0.0, xb_ = 0.0, h_ = 0.0;
  std::vector<double> x_, psi_, phi_, chi_;
  std::vector<std::size_t> S_;
  WarpedField input_;
  std::vector<double> A_in_, W_in_, R_in_;
};

/// Outer root-find of q(eps') = 0 by bracket expansion and TOMS 748.
inline DelaunayGlueReport glue_delaunay_1d(int n, double eps, const WarpedSource& source,
                                           const DelaunayGlueControls& ctl) {
  if (eps >= neck_bound(n)) throw ConfigError("delaunay glue: neck size must be below " + format_double(neck_bound(n)));
  if (!(eps < cylinder_value(n)))
    throw HypothesisError("delaunay glue: neck size must be below the cylinder value " + format_double(cylinder_value(n)));
  DelaunayGlueContext ctx(n, eps, source, ctl);
  DelaunayGlueReport rep;
  rep.n = n;
  rep.eps = eps;
  rep.window_start = ctx.window_start();
  rep.window_end = ctx.window_end();
  rep.sigma = ctx.sigma();

  const double upper = cylinder_value(n) * (1.0 - 1e-9);
  DelaunayInner best;
  best.q = std::numeric_limits<double>::infinity();
  int count = 0;
  const auto q_of = [&](double e) {
    auto r = ctx.evaluate(e);
    if (!r.converged)
      throw SolverError("delaunay glue: inner Newton did not converge at eps' = " + format_double(e) +
                        " (residual " + format_double(r.weighted_residual) + ")");
    rep.trace.push_back({count++, e, r.q, r.weighted_residual, r.iterations});
    const double q = r.q;
    if (std::abs(q) < std::abs(best.q)) best = std::move(r);
    return q;
  };

  const auto finish = [&] {
    rep.inner = best;
    rep.eps_prime = best.eps_prime;
    rep.q = best.q;
    rep.converged = std::abs(best.q) <= ctl.q_tol;
    if (!rep.converged && rep.message.empty()) rep.message = "root-find stopped at |q| = " + format_double(std::abs(best.q));
    return rep;
  };

  double a = eps, fa = q_of(a);
  rep.bracket_history.push_back({a, fa});
  if (std::abs(fa) <= ctl.q_tol) return finish();
  const double d0 = ctl.bracket_step * eps;
  double b = std::min(eps + d0, upper), fb = q_of(b);
  rep.bracket_history.push_back({b, fb});
  if (std::abs(fb) <= ctl.q_tol) return finish();
  if ((fa < 0.0) == (fb < 0.0)) {
    // expand toward the secant root
    const double dir = (b - fb * (b - a) / (fb - fa)) > a ? 1.0 : -1.0;
    double step = d0;
    bool found = false;
    for (int k = 0; k < ctl.bracket_max; ++k) {
      const double c = std::clamp(eps + dir * step, 1e-9, upper);
      const double fc = q_of(c);
      rep.bracket_history.push_back({c, fc});
      if (std::abs(fc) <= ctl.q_tol) return finish();
      if ((fc < 0.0) != (fa < 0.0)) {
        b = c;
        fb = fc;
        found = true;
        break;
      }
      a = c;
      fa = fc;
      step *= 2.0;
    }
    if (!found) {
      rep.message = "no sign change of q in the bracket; expansion history has " +
                    std::to_string(rep.bracket_history.size()) + " entries";
      return finish();
    }
  }
  if (a > b) {
    std::swap(a, b);
    std::swap(fa, fb);
  }
  boost::uintmax_t iters = static_cast<boost::uintmax_t>(ctl.root_max);
  const auto stop = [&](double l, double r) {
    return std::abs(best.q) <= ctl.q_tol || std::abs(r - l) <= 4.0 * std::numeric_limits<double>::epsilon() * r;
  };
  try {
    boost::math::tools::toms748_solve(q_of, a, b, fa, fb, stop, iters);
  } catch (const boost::math::evaluation_error& e) {
    rep.message = e.what();
  }
  return finish();
}

}  // namespace scglue
