#pragma once
// Closed-form model metrics. Evaluators are templated on the scalar type so
// dual numbers give exact first and second derivatives at a point.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "scglue/dual.hpp"
#include "scglue/grid.hpp"

namespace scglue {

template <class T>
using Vec = std::array<T, kMaxDim>;
template <class T>
using Mat = std::array<T, kMaxDim * kMaxDim>;

enum class ModelKind { euclidean, schwarzschild, ae_test, bump, conformal, warped };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::euclidean: return "euclidean";
    case ModelKind::schwarzschild: return "schwarzschild";
    case ModelKind::ae_test: return "ae_test";
    case ModelKind::bump: return "bump";
    case ModelKind::conformal: return "conformal";
    case ModelKind::warped: return "warped";
  }
  return "?";
}

namespace detail {
// Portable uniform draws in [-1, 1) from a seed.
inline std::array<double, 16> seeded_coefficients(std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::array<double, 16> out{};
  for (auto& v : out) v = 2.0 * (static_cast<double>(rng()) / 4294967296.0) - 1.0;
  return out;
}
}  // namespace detail

/// A model metric on R^n (or on a region of it).
///
///  euclidean      delta
///  schwarzschild  (1 + m/((n-1)|x-c|^{n-2}))^{4/(n-2)} delta
///  ae_test        U^{4/(n-2)} (delta + amp E + odd_amp O), U = 1 + m0/((n-1)(1+r^2)^{(n-2)/2}),
///                 E even of order r^-alpha, O odd of order r^-(alpha+1)
///  bump           delta + amp (1-|x-c|^2/w^2)_+^8 B, B symmetric from the seed
///  conformal      U^{4/(n-2)} delta, U = 1 + amp (1+|x-c|^2/w^2)^{-(n-2)/2} + bump_amp (1-|x-c2|^2/w2^2)_+^8
///  warped         dr^2 + rho(r)^2 (round sphere), rho = r (1 + amp sin(freq r))
///
/// `scale` composes the rescaling x -> scale * x on the components.
struct MetricSpec {
  ModelKind kind = ModelKind::euclidean;
  int n = 3;
  double m = 0.0;
  Point c{};
  double alpha = 1.5;
  double amp = 0.0;
  double odd_amp = 0.0;
  double m0 = 1.0;
  std::uint32_t seed = 1;
  double width = 1.0;
  double bump_amp = 0.0;
  Point c2{};
  double width2 = 1.0;
  double freq = 1.0;
  double scale = 1.0;

  static MetricSpec euclidean(int n) {
    MetricSpec s;
    s.kind = ModelKind::euclidean;
    s.n = n;
    s.validate();
    return s;
  }
  static MetricSpec schwarzschild(int n, double m, Point c = {}) {
    MetricSpec s;
    s.kind = ModelKind::schwarzschild;
    s.n = n;
    s.m = m;
    s.c = c;
    s.validate();
    return s;
  }
  static MetricSpec ae_test(int n, double alpha, double amp, double odd_amp, std::uint32_t seed, double m0 = 1.0) {
    MetricSpec s;
    s.kind = ModelKind::ae_test;
    s.n = n;
    s.alpha = alpha;
    s.amp = amp;
    s.odd_amp = odd_amp;
    s.seed = seed;
    s.m0 = m0;
    s.validate();
    return s;
  }
  static MetricSpec bump(int n, double amp, Point centre, double width, std::uint32_t seed = 1) {
    MetricSpec s;
    s.kind = ModelKind::bump;
    s.n = n;
    s.amp = amp;
    s.c = centre;
    s.width = width;
    s.seed = seed;
    s.validate();
    return s;
  }
  static MetricSpec conformal(int n, double amp, Point centre, double width, double bump_amp = 0.0,
                              Point centre2 = {}, double width2 = 1.0) {
    MetricSpec s;
    s.kind = ModelKind::conformal;
    s.n = n;
    s.amp = amp;
    s.c = centre;
    s.width = width;
    s.bump_amp = bump_amp;
    s.c2 = centre2;
    s.width2 = width2;
    s.validate();
    return s;
  }
  static MetricSpec warped(int n, double amp, double freq) {
    MetricSpec s;
    s.kind = ModelKind::warped;
    s.n = n;
    s.amp = amp;
    s.freq = freq;
    s.validate();
    return s;
  }

  void validate() const {
    if (n < 2 || n > kMaxDim) throw DomainError("metric spec: dimension must be in [2, 4]");
    if (!(scale > 0.0)) throw DomainError("metric spec: scale must be positive");
    switch (kind) {
      case ModelKind::schwarzschild:
        if (n < 3) throw DomainError("schwarzschild: requires n >= 3");
        break;
      case ModelKind::ae_test:
        if (n < 3) throw DomainError("ae_test: requires n >= 3");
        if (!(alpha > 0.5 * n - 1.0)) throw DomainError("ae_test: decay rate must exceed n/2 - 1");
        break;
      case ModelKind::bump:
        if (!(width > 0.0)) throw DomainError("bump: width must be positive");
        break;
      case ModelKind::conformal:
        if (n < 3) throw DomainError("conformal: requires n >= 3");
        if (!(width > 0.0) || !(width2 > 0.0)) throw DomainError("conformal: widths must be positive");
        break;
      case ModelKind::warped:
        if (n != 3) throw DomainError("warped: cartesian realization is implemented for n = 3");
        break;
      default: break;
    }
  }

  /// Excluded point of the evaluator, if any.
  bool has_singularity() const { return kind == ModelKind::schwarzschild || kind == ModelKind::warped; }
  Point singularity() const {
    Point p{};
    if (kind == ModelKind::schwarzschild)
      for (int a = 0; a < n; ++a) p[a] = c[a] / scale;
    return p;
  }

  /// Metric components at x (the full n x n block of a kMaxDim-strided matrix).
  template <class T>
  Mat<T> metric(const Vec<T>& x_in) const {
    using std::exp;
    using std::pow;
    using std::sin;
    using std::sqrt;
    Vec<T> x{};
    for (int a = 0; a < n; ++a) x[a] = x_in[a] * scale;
    Mat<T> g{};
    for (int i = 0; i < n; ++i) g[i * kMaxDim + i] = T(1.0);
    const auto sqdist = [&](const Point& ctr) {
      T s = T(0.0);
      for (int a = 0; a < n; ++a) s += (x[a] - ctr[a]) * (x[a] - ctr[a]);
      return s;
    };
    const auto poly_bump = [&](const Point& ctr, double w) {
      T s = sqdist(ctr) / (w * w);
      if (!(value_of(s) < 1.0)) return T(0.0);
      T t = T(1.0) - s;
      T t2 = t * t, t4 = t2 * t2;
      return t4 * t4;
    };
    switch (kind) {
      case ModelKind::euclidean: break;
      case ModelKind::schwarzschild: {
        T r2 = sqdist(c);
        T U = T(1.0) + m / ((n - 1.0) * pow(r2, 0.5 * (n - 2)));
        T f = pow(U, 4.0 / (n - 2));
        for (int i = 0; i < n; ++i) g[i * kMaxDim + i] = f;
        break;
      }
      case ModelKind::ae_test: {
        const auto co = detail::seeded_coefficients(seed);
        T r2 = T(0.0);
        for (int a = 0; a < n; ++a) r2 += x[a] * x[a];
        T q = T(1.0) + r2;
        T U = T(1.0) + m0 / ((n - 1.0) * pow(q, 0.5 * (n - 2)));
        T f = pow(U, 4.0 / (n - 2));
        T env = pow(q, -0.5 * alpha);
        const double B = co[10];
        T odd_env = pow(q, -0.5 * (alpha + 2.0));
        T vx = T(0.0);
        for (int a = 0; a < n; ++a) vx += co[11 + a] * x[a];
        int k = 0;
        for (int i = 0; i < n; ++i)
          for (int j = i; j < n; ++j, ++k) {
            const double A = 0.5 * co[k];
            const double C = 0.5 * co[(k + 5) % 10];
            T v = (i == j ? T(1.0) : T(0.0)) + amp * env * (A + B * x[i] * x[j] / q) + odd_amp * odd_env * vx * C;
            g[i * kMaxDim + j] = f * v;
            g[j * kMaxDim + i] = f * v;
          }
        break;
      }
      case ModelKind::bump: {
        const auto co = detail::seeded_coefficients(seed);
        T b = amp * poly_bump(c, width);
        int k = 0;
        for (int i = 0; i < n; ++i)
          for (int j = i; j < n; ++j, ++k) {
            T v = (i == j ? T(1.0) : T(0.0)) + b * (0.5 * co[k]);
            g[i * kMaxDim + j] = v;
            g[j * kMaxDim + i] = v;
          }
        break;
      }
      case ModelKind::conformal: {
        T U = T(1.0) + amp * pow(T(1.0) + sqdist(c) / (width * width), -0.5 * (n - 2)) +
              bump_amp * poly_bump(c2, width2);
        T f = pow(U, 4.0 / (n - 2));
        for (int i = 0; i < n; ++i) g[i * kMaxDim + i] = f;
        break;
      }
      case ModelKind::warped: {
        T r = sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        T rho_over_r = T(1.0) + amp * sin(freq * r);
        T k2 = rho_over_r * rho_over_r;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) {
            T xx = x[i] * x[j] / (r * r);
            g[i * kMaxDim + j] = xx + k2 * ((i == j ? T(1.0) : T(0.0)) - xx);
          }
        break;
      }
    }
    return g;
  }

  /// Metric and first derivatives dg[k][i][j] = d_k g_ij.
  template <class T>
  void metric_and_gradient(const Vec<T>& x, Mat<T>& g, std::array<Mat<T>, kMaxDim>& dg) const {
    for (int k = 0; k < n; ++k) {
      Vec<Dual<T>> xd{};
      for (int a = 0; a < n; ++a) xd[a] = Dual<T>(x[a], a == k ? T(1.0) : T(0.0));
      const auto gd = metric(xd);
      for (int e = 0; e < kMaxDim * kMaxDim; ++e) {
        if (k == 0) g[e] = gd[e].v;
        dg[k][e] = gd[e].d;
      }
    }
  }

  /// Christoffel symbols gamma[k][i][j] (kMaxDim-strided) at x.
  template <class T>
  std::array<T, kMaxDim * kMaxDim * kMaxDim> christoffel(const Vec<T>& x) const {
    Mat<T> g;
    std::array<Mat<T>, kMaxDim> dg;
    metric_and_gradient(x, g, dg);
    SmallMat<T> m, inv;
    m.n = n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = g[i * kMaxDim + j];
    T det;
    if (!spd_inverse(m, inv, det)) throw DomainError("metric spec: metric not positive-definite at evaluation point");
    std::array<T, kMaxDim * kMaxDim * kMaxDim> gam{};
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          T s = T(0.0);
          for (int l = 0; l < n; ++l)
            s += inv(k, l) * (dg[i][j * kMaxDim + l] + dg[j][i * kMaxDim + l] - dg[l][i * kMaxDim + j]);
          gam[(k * kMaxDim + i) * kMaxDim + j] = 0.5 * s;
        }
    return gam;
  }

  /// Scalar curvature at x from exact derivatives.
  double scalar_curvature(const Point& x) const {
    constexpr int K = kMaxDim;
    std::array<std::array<double, K * K * K>, K> dgam{};
    std::array<double, K * K * K> gam{};
    for (int m_ = 0; m_ < n; ++m_) {
      Vec<Dual<double>> xd{};
      for (int a = 0; a < n; ++a) xd[a] = Dual<double>(x[a], a == m_ ? 1.0 : 0.0);
      const auto gd = christoffel(xd);
      for (int e = 0; e < K * K * K; ++e) {
        gam[e] = gd[e].v;
        dgam[m_][e] = gd[e].d;
      }
    }
    const auto G = [&](int k, int i, int j) { return gam[(k * K + i) * K + j]; };
    const auto dG = [&](int m_, int k, int i, int j) { return dgam[m_][(k * K + i) * K + j]; };
    Vec<double> xv{};
    for (int a = 0; a < n; ++a) xv[a] = x[a];
    const auto g = metric(xv);
    SmallMat<double> mm, inv;
    mm.n = n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) mm(i, j) = g[i * K + j];
    double det;
    if (!spd_inverse(mm, inv, det)) throw DomainError("metric spec: metric not positive-definite at evaluation point");
    double R = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double ric = 0.0;
        for (int k = 0; k < n; ++k) {
          ric += dG(k, k, i, j) - dG(i, k, k, j);
          for (int l = 0; l < n; ++l) ric += G(k, k, l) * G(l, i, j) - G(k, i, l) * G(l, k, j);
        }
        R += inv(i, j) * ric;
      }
    return R;
  }

  SmallMat<double> metric_at(const Point& x) const {
    Vec<double> xv{};
    for (int a = 0; a < n; ++a) xv[a] = x[a];
    const auto g = metric(xv);
    SmallMat<double> out;
    out.n = n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out(i, j) = g[i * kMaxDim + j];
    return out;
  }
};

/// g_lambda with components g_ij(lambda x).
inline MetricSpec rescale(const MetricSpec& spec, double lambda) {
  if (!(lambda > 0.0)) throw DomainError("rescale: lambda must be positive");
  MetricSpec out = spec;
  out.scale *= lambda;
  return out;
}

/// Samples the spec at every node. Deep-hole nodes (more than 4 dx inside
/// the inner radius, out of reach of every stencil used on the active set)
/// take the value at their radial projection onto that sphere.
inline MetricField sample(const MetricSpec& spec, const GridPtr& grid) {
  if (grid->kind() != GridKind::annulus) throw DomainError("sample: requires an annulus grid");
  if (grid->dim() != spec.n) throw DomainError("sample: grid and spec dimensions differ");
  const int n = spec.n;
  double r_fill = grid->inner() - 4.0 * grid->spacing();
  if (r_fill < 0.5 * grid->inner()) r_fill = 0.5 * grid->inner();
  if (spec.has_singularity()) {
    const Point c = spec.singularity();
    double rc = 0.0;
    for (int a = 0; a < n; ++a) rc += c[a] * c[a];
    rc = std::sqrt(rc);
    if (rc >= r_fill - 1e-12) throw DomainError("sample: grid region contains the excluded point of the model");
  }
  SymTensorField g(grid);
  bool ok = true;
  parallel_for(grid->size(), [&](std::size_t node) {
    Point p = grid->point(node);
    const double r = grid->radius(node);
    if (r < r_fill) {
      if (r > 0.0) {
        for (int a = 0; a < n; ++a) p[a] *= r_fill / r;
      } else {
        p = Point{};
        p[0] = r_fill;
      }
    }
    const auto m = spec.metric_at(p);
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        if (!std::isfinite(m(i, j))) ok = false;
        g.at(node, i, j) = m(i, j);
      }
  });
  if (!ok) throw DomainError("sample: non-finite metric value (excluded point on the grid?)");
  try {
    return MetricField(std::move(g));
  } catch (const SolverError& e) {
    throw DomainError(std::string("sample: ") + e.what());
  }
}

/// g + (sample(bump) - delta): a compactly supported perturbation of a sampled metric.
inline MetricField add_perturbation(const MetricField& g, const MetricSpec& bump) {
  if (bump.kind != ModelKind::bump) throw DomainError("add_perturbation: expected a bump spec");
  SymTensorField m = g.metric();
  m += sample(bump, g.grid()).metric();
  m -= constant_metric(g.grid()).metric();
  return MetricField(std::move(m));
}

/// Scalar curvature of the spec at every node, from exact derivatives.
inline ScalarField exact_scalar_curvature(const MetricSpec& spec, const GridPtr& grid) {
  ScalarField R(grid);
  for (auto i : grid->active_nodes()) R(i) = spec.scalar_curvature(grid->point(i));
  return R;
}

// ---------------------------------------------------------------------------
// JSON

inline void to_json(nlohmann::json& j, const MetricSpec& s) {
  auto point = [&](const Point& p) {
    nlohmann::json a = nlohmann::json::array();
    for (int k = 0; k < s.n; ++k) a.push_back(p[k]);
    return a;
  };
  j = nlohmann::json{{"kind", to_string(s.kind)}, {"n", s.n}};
  switch (s.kind) {
    case ModelKind::euclidean: break;
    case ModelKind::schwarzschild:
      j["m"] = s.m;
      j["c"] = point(s.c);
      break;
    case ModelKind::ae_test:
      j["alpha"] = s.alpha;
      j["amp"] = s.amp;
      j["odd_amp"] = s.odd_amp;
      j["seed"] = s.seed;
      j["m0"] = s.m0;
      break;
    case ModelKind::bump:
      j["amp"] = s.amp;
      j["center"] = point(s.c);
      j["width"] = s.width;
      j["seed"] = s.seed;
      break;
    case ModelKind::conformal:
      j["amp"] = s.amp;
      j["center"] = point(s.c);
      j["width"] = s.width;
      j["bump_amp"] = s.bump_amp;
      j["bump_center"] = point(s.c2);
      j["bump_width"] = s.width2;
      break;
    case ModelKind::warped:
      j["amp"] = s.amp;
      j["freq"] = s.freq;
      break;
  }
  if (s.scale != 1.0) j["scale"] = s.scale;
}

inline MetricSpec metric_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("metric: expected an object");
  MetricSpec s;
  if (!j.contains("kind") || !j["kind"].is_string()) throw ConfigError("metric: missing string 'kind'");
  const std::string kind = j["kind"];
  std::vector<std::string> allowed = {"kind", "n", "scale"};
  if (kind == "euclidean") {
    s.kind = ModelKind::euclidean;
  } else if (kind == "schwarzschild") {
    s.kind = ModelKind::schwarzschild;
    allowed.insert(allowed.end(), {"m", "c"});
  } else if (kind == "ae_test") {
    s.kind = ModelKind::ae_test;
    allowed.insert(allowed.end(), {"alpha", "amp", "odd_amp", "seed", "m0"});
  } else if (kind == "bump") {
    s.kind = ModelKind::bump;
    allowed.insert(allowed.end(), {"amp", "center", "width", "seed"});
  } else if (kind == "conformal") {
    s.kind = ModelKind::conformal;
    allowed.insert(allowed.end(), {"amp", "center", "width", "bump_amp", "bump_center", "bump_width"});
  } else if (kind == "warped") {
    s.kind = ModelKind::warped;
    allowed.insert(allowed.end(), {"amp", "freq"});
  } else {
    throw ConfigError("metric: unknown kind '" + kind + "'");
  }
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError("metric (" + kind + "): unknown key '" + it.key() + "'");
  auto num = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ConfigError(std::string("metric: '") + key + "' must be a number");
    out = j[key].get<double>();
  };
  auto point = [&](const char* key, Point& out) {
    if (!j.contains(key)) return;
    const auto& a = j[key];
    if (!a.is_array() || a.size() > static_cast<std::size_t>(kMaxDim))
      throw ConfigError(std::string("metric: '") + key + "' must be an array of at most 4 numbers");
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (!a[k].is_number()) throw ConfigError(std::string("metric: '") + key + "' entries must be numbers");
      out[k] = a[k].get<double>();
    }
  };
  if (j.contains("n")) {
    if (!j["n"].is_number_integer()) throw ConfigError("metric: 'n' must be an integer");
    s.n = j["n"].get<int>();
  }
  num("m", s.m);
  point("c", s.c);
  point("center", s.c);
  num("alpha", s.alpha);
  num("amp", s.amp);
  num("odd_amp", s.odd_amp);
  num("m0", s.m0);
  num("width", s.width);
  num("bump_amp", s.bump_amp);
  point("bump_center", s.c2);
  num("bump_width", s.width2);
  num("freq", s.freq);
  num("scale", s.scale);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw ConfigError("metric: 'seed' must be a non-negative integer");
    s.seed = j["seed"].get<std::uint32_t>();
  }
  try {
    s.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

}  // namespace scglue
