#pragma once
// Structured grids (Cartesian box with an annulus mask, or a 1-D interval),
// node-sampled tensor fields, 4th-order centered differences and volume sums.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "scglue/dual.hpp"
#include "scglue/errors.hpp"

namespace scglue {

inline constexpr int kStencilRadius = 2;
/// Layers of nodes stored outside the nominal box so nested stencils stay centered.
inline constexpr int kGhostLayers = 4;
inline constexpr int kMaxDim = 4;

using Point = std::array<double, kMaxDim>;

// ---------------------------------------------------------------------------
// Deterministic helpers

/// Number of worker threads, from SCGLUE_THREADS (default 1).
inline int thread_count() {
  static const int count = [] {
    const char* env = std::getenv("SCGLUE_THREADS");
    int t = env ? std::atoi(env) : 1;
    return std::clamp(t, 1, 256);
  }();
  return count;
}

/// Static block partition of [0, count). Bodies must write disjoint outputs;
/// no reductions happen here, so results do not depend on the thread count.
template <class F>
void parallel_for(std::size_t count, F&& body) {
  const int threads = thread_count();
  if (threads == 1 || count < 4096) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t block = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t lo = t * block;
    const std::size_t hi = std::min(count, lo + block);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

/// Pairwise summation with a fixed split order.
inline double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// ---------------------------------------------------------------------------
// Symmetric index packing

/// Packed position of (i, j) in the upper-triangular row-major layout.
inline int sym_index(int i, int j, int n) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i - 1) / 2 + (j - i);
}
inline int sym_size(int n) { return n * (n + 1) / 2; }

// ---------------------------------------------------------------------------
// Grid

enum class GridKind { annulus, interval };

class Grid {
 public:
  /// Box [-r_out, r_out]^n with n_per_axis nodes per axis; active nodes are
  /// r_in + collar*dx <= |x| <= r_out - collar*dx.
  static std::shared_ptr<const Grid> annulus(int dim, double r_in, double r_out, int n_per_axis,
                                             int collar = 2) {
    if (dim < 2 || dim > kMaxDim) throw DomainError("annulus grid: dimension must be in [2, 4]");
    if (!(r_in > 0.0) || !(r_in < r_out))
      throw DomainError("annulus grid: require 0 < r_in < r_out");
    if (n_per_axis < 8) throw DomainError("annulus grid: need at least 8 nodes per axis");
    if (collar < kStencilRadius) throw DomainError("annulus grid: collar must be >= 2");
    auto g = std::shared_ptr<Grid>(new Grid());
    g->kind_ = GridKind::annulus;
    g->dim_ = dim;
    g->lo_ = r_in;
    g->hi_ = r_out;
    g->n_nominal_ = n_per_axis;
    g->collar_ = collar;
    g->dx_ = 2.0 * r_out / (n_per_axis - 1);
    g->origin_ = -r_out - kGhostLayers * g->dx_;
    g->build();
    return g;
  }

  /// Uniform nodes on [x0, x1] plus ghost layers; collar nodes at each end are inactive.
  static std::shared_ptr<const Grid> interval(double x0, double x1, int n, int collar = 2) {
    if (!(x0 < x1)) throw DomainError("interval grid: require x0 < x1");
    if (collar < kStencilRadius) throw DomainError("interval grid: collar must be >= 2");
    if (n < 2 * collar + 4) throw DomainError("interval grid: no interior nodes");
    auto g = std::shared_ptr<Grid>(new Grid());
    g->kind_ = GridKind::interval;
    g->dim_ = 1;
    g->lo_ = x0;
    g->hi_ = x1;
    g->n_nominal_ = n;
    g->collar_ = collar;
    g->dx_ = (x1 - x0) / (n - 1);
    g->origin_ = x0 - kGhostLayers * g->dx_;
    g->build();
    return g;
  }

  GridKind kind() const { return kind_; }
  int dim() const { return dim_; }
  double spacing() const { return dx_; }
  double cell_volume() const { return std::pow(dx_, dim_); }
  int nodes_per_axis() const { return m_; }
  int nominal_nodes() const { return n_nominal_; }
  int collar() const { return collar_; }
  double inner() const { return lo_; }  ///< r_in or x0
  double outer() const { return hi_; }  ///< r_out or x1
  std::size_t size() const { return size_; }
  std::size_t stride(int axis) const { return strides_[axis]; }

  int axis_index(std::size_t node, int axis) const {
    return static_cast<int>((node / strides_[axis]) % m_);
  }
  double coord(std::size_t node, int axis) const {
    return origin_ + dx_ * axis_index(node, axis);
  }
  Point point(std::size_t node) const {
    Point p{};
    for (int a = 0; a < dim_; ++a) p[a] = coord(node, a);
    return p;
  }
  double radius(std::size_t node) const {
    double s = 0.0;
    for (int a = 0; a < dim_; ++a) s += coord(node, a) * coord(node, a);
    return std::sqrt(s);
  }
  /// Distance in nodes to the nearest face of the stored box.
  int depth(std::size_t node) const {
    int d = m_;
    for (int a = 0; a < dim_; ++a) {
      int i = axis_index(node, a);
      d = std::min({d, i, m_ - 1 - i});
    }
    return d;
  }
  /// Node at the point reflection x -> -x.
  std::size_t mirror(std::size_t node) const {
    std::size_t out = 0;
    for (int a = 0; a < dim_; ++a) out += (m_ - 1 - axis_index(node, a)) * strides_[a];
    return out;
  }
  bool is_active(std::size_t node) const { return active_[node] != 0; }
  const std::vector<std::size_t>& active_nodes() const { return active_list_; }

  /// Nodes at depth >= d, in increasing index order.
  std::vector<std::size_t> nodes_with_depth(int d) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size_; ++i)
      if (depth(i) >= d) out.push_back(i);
    return out;
  }

  /// Radial (or 1-D) coordinate used by masks and boundary distances.
  double radial(std::size_t node) const {
    return kind_ == GridKind::annulus ? radius(node) : coord(node, 0);
  }
  /// True when the node lies in the closed gluing region [inner, outer].
  bool in_region(std::size_t node) const {
    const double r = radial(node);
    const double tol = 1e-12 * dx_;
    return r >= lo_ - tol && r <= hi_ + tol;
  }

 private:
  Grid() = default;

  void build() {
    m_ = n_nominal_ + 2 * kGhostLayers;
    size_ = 1;
    for (int a = 0; a < dim_; ++a) {
      strides_[a] = size_;
      size_ *= static_cast<std::size_t>(m_);
    }
    active_.assign(size_, 0);
    const double tol = 1e-10 * dx_;
    const double lo = lo_ + collar_ * dx_ - tol;
    const double hi = hi_ - collar_ * dx_ + tol;
    for (std::size_t i = 0; i < size_; ++i) {
      bool inside_box = true;
      for (int a = 0; a < dim_; ++a) {
        int k = axis_index(i, a);
        if (k < kGhostLayers || k > m_ - 1 - kGhostLayers) inside_box = false;
      }
      const double r = radial(i);
      if (inside_box && r >= lo && r <= hi) {
        active_[i] = 1;
        active_list_.push_back(i);
      }
    }
    // Count active nodes along a radial line to reject degenerate domains.
    int along = 0;
    for (int k = 0; k < m_; ++k) {
      double t = origin_ + dx_ * k;
      if (t >= lo && t <= hi) ++along;
    }
    if (along < 4) throw DomainError("degenerate domain: fewer than 4 active nodes per axis");
  }

  GridKind kind_ = GridKind::annulus;
  int dim_ = 1;
  double lo_ = 0.0, hi_ = 1.0;
  int n_nominal_ = 0;
  int collar_ = 2;
  double dx_ = 1.0;
  double origin_ = 0.0;
  int m_ = 0;
  std::size_t size_ = 0;
  std::array<std::size_t, kMaxDim> strides_{};
  std::vector<std::uint8_t> active_;
  std::vector<std::size_t> active_list_;
};

using GridPtr = std::shared_ptr<const Grid>;

// ---------------------------------------------------------------------------
// Fields

struct ScalarTag {
  static int components(int) { return 1; }
};
struct CovectorTag {
  static int components(int n) { return n; }
};
struct SymTensorTag {
  static int components(int n) { return sym_size(n); }
};
struct ChristoffelTag {
  static int components(int n) { return n * sym_size(n); }
};

/// Node-sampled tensor data sharing a grid handle. Layout: values[node * ncomp + c].
template <class Tag, class T = double>
class Field {
 public:
  Field() = default;
  explicit Field(GridPtr grid, T fill = T(0.0))
      : grid_(std::move(grid)),
        ncomp_(Tag::components(grid_->dim())),
        values_(grid_->size() * ncomp_, fill) {}

  const GridPtr& grid() const { return grid_; }
  const Grid& g() const { return *grid_; }
  int components() const { return ncomp_; }
  std::size_t size() const { return grid_ ? grid_->size() : 0; }

  T& operator()(std::size_t node, int c = 0) { return values_[node * ncomp_ + c]; }
  const T& operator()(std::size_t node, int c = 0) const { return values_[node * ncomp_ + c]; }
  /// Symmetric tensor component (i, j).
  T& at(std::size_t node, int i, int j) { return values_[node * ncomp_ + sym_index(i, j, grid_->dim())]; }
  const T& at(std::size_t node, int i, int j) const {
    return values_[node * ncomp_ + sym_index(i, j, grid_->dim())];
  }

  std::vector<T>& values() { return values_; }
  const std::vector<T>& values() const { return values_; }

  Field& operator+=(const Field& o) {
    check_same_grid(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  Field& operator-=(const Field& o) {
    check_same_grid(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  Field& operator*=(double s) {
    for (auto& v : values_) v *= s;
    return *this;
  }
  friend Field operator+(Field a, const Field& b) { return a += b; }
  friend Field operator-(Field a, const Field& b) { return a -= b; }
  friend Field operator*(double s, Field a) { return a *= s; }

  void check_same_grid(const Field& o) const {
    if (grid_ != o.grid_) throw DomainError("fields live on different grids");
  }
  template <class OtherTag, class U>
  void check_same_grid(const Field<OtherTag, U>& o) const {
    if (grid_ != o.grid()) throw DomainError("fields live on different grids");
  }

  /// Max |value| over the given nodes (all components).
  double max_abs(std::span<const std::size_t> nodes) const {
    double m = 0.0;
    for (auto i : nodes)
      for (int c = 0; c < ncomp_; ++c) m = std::max(m, std::abs(value_of((*this)(i, c))));
    return m;
  }
  double max_abs_active() const { return max_abs(grid_->active_nodes()); }
  bool all_finite() const {
    for (const auto& v : values_)
      if (!std::isfinite(value_of(v))) return false;
    return true;
  }

 private:
  GridPtr grid_;
  int ncomp_ = 0;
  std::vector<T> values_;
};

using ScalarField = Field<ScalarTag>;
using CovectorField = Field<CovectorTag>;
using SymTensorField = Field<SymTensorTag>;
using ChristoffelField = Field<ChristoffelTag>;

/// Fill a scalar field from a callable of the node point.
template <class F>
ScalarField make_scalar(const GridPtr& grid, F&& f) {
  ScalarField out(grid);
  for (std::size_t i = 0; i < grid->size(); ++i) out(i) = f(grid->point(i));
  return out;
}

// ---------------------------------------------------------------------------
// Small dense symmetric matrices (n <= 4), templated for dual numbers.

template <class T>
struct SmallMat {
  int n = 0;
  std::array<T, kMaxDim * kMaxDim> a{};
  T& operator()(int i, int j) { return a[i * kMaxDim + j]; }
  const T& operator()(int i, int j) const { return a[i * kMaxDim + j]; }
};

/// Cholesky-based inverse and determinant. Returns false if not positive-definite.
template <class T>
bool spd_inverse(const SmallMat<T>& m, SmallMat<T>& inv, T& det) {
  using std::sqrt;
  const int n = m.n;
  SmallMat<T> l;
  l.n = n;
  det = T(1.0);
  for (int j = 0; j < n; ++j) {
    T s = m(j, j);
    for (int k = 0; k < j; ++k) s -= l(j, k) * l(j, k);
    if (!(value_of(s) > 0.0) || !std::isfinite(value_of(s))) return false;
    l(j, j) = sqrt(s);
    det *= s;
    for (int i = j + 1; i < n; ++i) {
      T t = m(i, j);
      for (int k = 0; k < j; ++k) t -= l(i, k) * l(j, k);
      l(i, j) = t / l(j, j);
    }
  }
  // Invert L, then inv = L^-T L^-1.
  SmallMat<T> li;
  li.n = n;
  for (int i = 0; i < n; ++i) {
    li(i, i) = T(1.0) / l(i, i);
    for (int j = 0; j < i; ++j) {
      T s = T(0.0);
      for (int k = j; k < i; ++k) s -= l(i, k) * li(k, j);
      li(i, j) = s / l(i, i);
    }
  }
  inv.n = n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      T s = T(0.0);
      for (int k = i; k < n; ++k) s += li(k, i) * li(k, j);
      inv(i, j) = s;
      inv(j, i) = s;
    }
  return true;
}

// ---------------------------------------------------------------------------
// Metric field with cached inverse and sqrt(det).

class MetricField {
 public:
  MetricField() = default;
  explicit MetricField(SymTensorField g) : g_(std::move(g)), inv_(g_.grid()), sqrt_det_(g_.grid()) {
    const int n = g_.g().dim();
    for (std::size_t node = 0; node < g_.size(); ++node) {
      SmallMat<double> m, inv;
      m.n = n;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = g_.at(node, i, j);
      double det = 0.0;
      if (!spd_inverse(m, inv, det)) {
        auto p = g_.g().point(node);
        std::string where;
        for (int a = 0; a < n; ++a) where += (a ? ", " : "") + std::to_string(p[a]);
        throw SolverError("metric not positive-definite at node " + std::to_string(node) + " (" +
                          where + ")");
      }
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) inv_.at(node, i, j) = inv(i, j);
      sqrt_det_(node) = std::sqrt(det);
    }
  }

  const GridPtr& grid() const { return g_.grid(); }
  int dim() const { return g_.g().dim(); }
  const SymTensorField& metric() const { return g_; }
  const SymTensorField& inverse() const { return inv_; }
  const ScalarField& sqrt_det() const { return sqrt_det_; }
  double operator()(std::size_t node, int i, int j) const { return g_.at(node, i, j); }
  double inv(std::size_t node, int i, int j) const { return inv_.at(node, i, j); }

 private:
  SymTensorField g_;
  SymTensorField inv_;
  ScalarField sqrt_det_;
};

/// Constant multiple of the Euclidean metric.
inline MetricField constant_metric(const GridPtr& grid, double c = 1.0) {
  SymTensorField g(grid);
  const int n = grid->dim();
  for (std::size_t node = 0; node < grid->size(); ++node)
    for (int i = 0; i < n; ++i) g.at(node, i, i) = c;
  return MetricField(std::move(g));
}

// ---------------------------------------------------------------------------
// Finite differences

namespace fd {
inline constexpr std::array<double, 5> kFirst = {1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0};
inline constexpr std::array<double, 5> kSecond = {-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0,
                                                  -1.0 / 12.0};

/// d/dx_axis of raw component data at one node (caller guarantees stencil room).
template <class T>
T first(const std::vector<T>& v, int ncomp, int c, std::size_t node, std::size_t stride, double dx) {
  const auto at = [&](int o) -> const T& { return v[(node + o * static_cast<std::ptrdiff_t>(stride)) * ncomp + c]; };
  // Paired so that constant data differentiates to exactly zero.
  T s = (8.0 / 12.0) * (at(1) - at(-1)) - (1.0 / 12.0) * (at(2) - at(-2));
  return s * (1.0 / dx);
}
template <class T>
T second(const std::vector<T>& v, int ncomp, int c, std::size_t node, std::size_t stride, double dx) {
  const auto at = [&](int o) -> const T& { return v[(node + o * static_cast<std::ptrdiff_t>(stride)) * ncomp + c]; };
  T s = (16.0 / 12.0) * ((at(1) - at(0)) + (at(-1) - at(0))) - (1.0 / 12.0) * ((at(2) - at(0)) + (at(-2) - at(0)));
  return s * (1.0 / (dx * dx));
}
/// Mixed derivative d_a d_b as a tensor product of first-derivative stencils.
template <class T>
T mixed(const std::vector<T>& v, int ncomp, int c, std::size_t node, std::size_t sa, std::size_t sb,
        double dx) {
  const auto at = [&](int p, int q) -> const T& {
    return v[(node + p * static_cast<std::ptrdiff_t>(sa) + q * static_cast<std::ptrdiff_t>(sb)) * ncomp + c];
  };
  const auto row = [&](int p) {
    return (8.0 / 12.0) * (at(p, 1) - at(p, -1)) - (1.0 / 12.0) * (at(p, 2) - at(p, -2));
  };
  T s = (8.0 / 12.0) * (row(1) - row(-1)) - (1.0 / 12.0) * (row(2) - row(-2));
  return s * (1.0 / (dx * dx));
}
}  // namespace fd

/// 4th-order centered derivative along `axis` (order 1 or 2) at every node
/// with stencil room; nodes within 2 of the stored box face get 0.
template <class Tag>
Field<Tag> fd_partial(const Field<Tag>& f, int axis, int order) {
  const Grid& grid = f.g();
  if (axis < 0 || axis >= grid.dim()) throw DomainError("fd_partial: axis out of range");
  if (order != 1 && order != 2) throw DomainError("fd_partial: order must be 1 or 2");
  Field<Tag> out(f.grid());
  const int nc = f.components();
  const auto stride = grid.stride(axis);
  const double dx = grid.spacing();
  for (std::size_t node = 0; node < grid.size(); ++node) {
    if (grid.depth(node) < kStencilRadius) continue;
    for (int c = 0; c < nc; ++c)
      out(node, c) = order == 1 ? fd::first(f.values(), nc, c, node, stride, dx)
                                : fd::second(f.values(), nc, c, node, stride, dx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature over the active nodes

/// Sum of f * sqrt|g| * dx^n over active nodes, pairwise-summed in node order.
inline double integrate_volume(const ScalarField& f, const MetricField& g) {
  if (f.grid() != g.grid()) throw DomainError("integrate_volume: grid mismatch");
  const auto& nodes = f.g().active_nodes();
  std::vector<double> terms(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) terms[k] = f(nodes[k]) * g.sqrt_det()(nodes[k]);
  return pairwise_sum(terms) * f.g().cell_volume();
}

}  // namespace scglue
