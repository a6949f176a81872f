#pragma once
// Matching an AE end to a Schwarzschild slice: glue g_lambda to (g_S)_lambda on
// A_{1,4} and root-find S = (m, c) until the kernel obstructions
// q^0 = int (R(g~) - R_chi), q^l = int x^l (R(g~) - R_chi) vanish.

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "scglue/asymptotics.hpp"
#include "scglue/gluing.hpp"
#include "scglue/io.hpp"
#include "scglue/models.hpp"

namespace scglue {

struct MatchControls {
  int max_outer = 30;
  double q_tol = 1e-8;
  double fd_step = 1e-6;      ///< relative finite-difference step for the Jacobian
  double trust_radius = 0.25;  ///< max step relative to max(|m|, |c|, 1)
  double min_mass = 1e-6;      ///< |m| below this violates the nonzero-mass hypothesis
};

struct MatchProblem {
  MetricSpec g;
  double lambda = 10.0;
  int N = 24;
  double r_in = 1.0, r_out = 4.0;
  double r1 = 2.0, r2 = 3.0;
  WeightSpec weights = WeightSpec::defaults(3);
  SolverControls solver;
  MatchControls controls;
  double alpha = std::numeric_limits<double>::quiet_NaN();  ///< decay of g - delta; derived if NaN
  double beta = std::numeric_limits<double>::quiet_NaN();   ///< decay of R(g); derived if NaN
};

/// Decay rates (alpha, beta) of a model spec: g - delta = O(r^-alpha), R = O(r^-beta).
inline std::pair<double, double> decay_rates(const MetricSpec& s) {
  const double inf = std::numeric_limits<double>::infinity();
  switch (s.kind) {
    case ModelKind::euclidean: return {inf, inf};
    case ModelKind::schwarzschild: return {s.n - 2.0, inf};
    case ModelKind::ae_test: {
      double a = s.m0 != 0.0 ? s.n - 2.0 : inf;
      double b = s.m0 != 0.0 ? s.n + 2.0 : inf;
      if (s.amp != 0.0) {
        a = std::min(a, s.alpha);
        b = std::min(b, s.alpha + 2.0);
      }
      if (s.odd_amp != 0.0) {
        a = std::min(a, s.alpha + 1.0);
        b = std::min(b, s.alpha + 3.0);
      }
      return {a, b};
    }
    case ModelKind::bump: return {inf, inf};
    case ModelKind::conformal:
      return {s.amp != 0.0 ? s.n - 2.0 : inf, s.amp != 0.0 ? s.n + 2.0 : inf};
    case ModelKind::warped: return {0.0, 0.0};
  }
  return {0.0, 0.0};
}

/// Known ADM mass of a model, when it has a closed form.
inline std::optional<double> reference_mass(const MetricSpec& s) {
  const double l2n = std::pow(s.scale, s.n - 2.0);
  switch (s.kind) {
    case ModelKind::euclidean: return 0.0;
    case ModelKind::schwarzschild: return s.m / l2n;
    case ModelKind::ae_test:
      if (s.amp == 0.0 || s.alpha > s.n - 2.0) return s.m0 / l2n;
      return std::nullopt;
    default: return std::nullopt;
  }
}

struct MatchIteration {
  int iteration = 0;
  std::vector<double> S;
  std::vector<double> q;
  double q_inf = 0.0;
  double inner_residual = 0.0;
  bool accepted = true;
};

struct MatchReport {
  std::vector<double> S;   ///< (m, c^1..c^n)
  std::vector<double> S0;  ///< initial guess
  std::vector<double> q;
  std::vector<MatchIteration> history;
  GlueReport glue;
  int evaluations = 0;
  bool converged = false;
  std::string message;
  double jacobian_condition = 0.0;
  std::optional<double> reference_mass;
  std::vector<double> reference_com;  ///< C_g / m_g estimate at the largest ladder radius

  std::string csv() const {
    const std::size_t k = S.size();
    std::vector<std::string> head{"iteration", "accepted", "m"};
    for (std::size_t l = 1; l < k; ++l) head.push_back("c" + std::to_string(l));
    for (std::size_t l = 0; l < k; ++l) head.push_back("q" + std::to_string(l));
    head.push_back("q_inf");
    head.push_back("inner_residual");
    CsvWriter w(head);
    for (const auto& it : history) {
      std::vector<std::string> row{std::to_string(it.iteration), it.accepted ? "1" : "0"};
      for (double v : it.S) row.push_back(format_double(v));
      for (double v : it.q) row.push_back(format_double(v));
      row.push_back(format_double(it.q_inf));
      row.push_back(format_double(it.inner_residual));
      w.row(row);
    }
    return w.str();
  }
};

/// Everything about a matching problem that does not depend on S.
class MatchContext {
 public:
  explicit MatchContext(const MatchProblem& p) : p_(p) {
    const int n = p.g.n;
    if (n < 3) throw HypothesisError("matching: requires n >= 3");
    if (!(p.lambda > 0.0)) throw DomainError("matching: lambda must be positive");
    auto [a, b] = decay_rates(p.g);
    if (!std::isnan(p.alpha)) a = p.alpha;
    if (!std::isnan(p.beta)) b = p.beta;
    alpha_ = a;
    beta_ = b;
    if (!(a > 0.5 * n - 1.0)) throw HypothesisError("matching: decay rate alpha must exceed n/2 - 1");
    if (!(b > n)) throw HypothesisError("matching: R(g) must decay faster than r^-n");
    grid_ = Grid::annulus(n, p.r_in, p.r_out, p.N, 2);
    g_lambda_ = sample(rescale(p.g, p.lambda), grid_);
  }

  const MatchProblem& problem() const { return p_; }
  const GridPtr& grid() const { return grid_; }
  const MetricField& g_lambda() const { return g_lambda_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }

  MetricSpec model(const std::vector<double>& S) const {
    Point c{};
    for (int l = 0; l < p_.g.n; ++l) c[l] = S[l + 1];
    return rescale(MetricSpec::schwarzschild(p_.g.n, S[0], c), p_.lambda);
  }

  struct Evaluation {
    std::vector<double> q;
    GlueReport glue;
  };

  /// q(S): glue g_lambda to (g_S)_lambda from h = 0 and integrate the residual.
  Evaluation q_vector(const std::vector<double>& S) {
    if (S.size() != static_cast<std::size_t>(p_.g.n + 1)) throw DomainError("q_vector: S must have n + 1 entries");
    if (std::abs(S[0]) < p_.controls.min_mass) throw HypothesisError("q_vector: model mass is zero");
    GlueProblem gp{g_lambda_,
                   sample(model(S), grid_),
                   {p_.r1, p_.r2, {}},
                   p_.weights,
                   KernelModel::euclidean,
                   {},
                   p_.solver,
                   pre_};
    Evaluation ev{{}, glue(gp)};
    if (ev.glue.preconditioner) pre_ = ev.glue.preconditioner;
    if (!ev.glue.converged) throw SolverError("q_vector: inner glue did not converge: " + ev.glue.message);
    ev.q = obstruction_integrals(ev.glue);
    return ev;
  }

  /// int {1, x^l} (R(g~) - R_chi) dmu_{g~} over the active nodes.
  std::vector<double> obstruction_integrals(const GlueReport& rep) const {
    const auto& nodes = grid_->active_nodes();
    std::vector<double> q;
    for (int l = -1; l < p_.g.n; ++l) {
      std::vector<double> terms(nodes.size());
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto i = nodes[k];
        const double f = l < 0 ? 1.0 : grid_->coord(i, l);
        terms[k] = f * (rep.R(i) - rep.R_chi(i)) * rep.g_tilde.sqrt_det()(i);
      }
      q.push_back(pairwise_sum(terms) * grid_->cell_volume());
    }
    return q;
  }

 private:
  MatchProblem p_;
  GridPtr grid_;
  MetricField g_lambda_;
  double alpha_ = 0.0, beta_ = 0.0;
  std::shared_ptr<const DenseKperpFactor> pre_;
};

/// S_0 = (m_g(4 lambda), C_g(4 lambda) / m_g(4 lambda)).
inline std::vector<double> initial_guess(const MatchProblem& p, int order = 24) {
  const double lh = 4.0 * p.lambda;
  const double m0 = mass_at_radius(p.g, lh, order);
  if (!(std::abs(m0) >= p.controls.min_mass))
    throw HypothesisError("initial_guess: mass of the input metric vanishes (m = " + format_double(m0) + ")");
  const auto C = com_at_radius(p.g, lh, order);
  std::vector<double> S{m0};
  for (double v : C) S.push_back(v / m0);
  return S;
}

inline MatchReport match(const MatchProblem& p, std::optional<std::vector<double>> S_start = std::nullopt) {
  MatchContext ctx(p);
  const int k = p.g.n + 1;
  MatchReport rep;
  rep.S0 = S_start ? *S_start : initial_guess(p);
  rep.reference_mass = reference_mass(p.g);
  {
    const double big = 64.0 * p.lambda;
    const double mm = mass_at_radius(p.g, big);
    for (double v : com_at_radius(p.g, big)) rep.reference_com.push_back(v / mm);
  }
  using Vec = Eigen::VectorXd;
  const auto to_vec = [&](const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), k).eval(); };
  const auto to_std = [&](const Vec& v) { return std::vector<double>(v.data(), v.data() + k); };
  const auto qinf = [](const std::vector<double>& q) {
    double m = 0.0;
    for (double v : q) m = std::max(m, std::abs(v));
    return m;
  };

  Vec S = to_vec(rep.S0);
  auto ev = ctx.q_vector(rep.S0);
  ++rep.evaluations;
  Vec q = to_vec(ev.q);
  const auto record = [&](int it, const Vec& s, const MatchContext::Evaluation& e, bool accepted) {
    rep.history.push_back({it, to_std(s), e.q, qinf(e.q), e.glue.trace.back().weighted, accepted});
  };
  record(0, S, ev, true);

  // Finite-difference Jacobian at S_0.
  Eigen::MatrixXd J(k, k);
  for (int j = 0; j < k; ++j) {
    Vec Sp = S;
    const double step = p.controls.fd_step * std::max(1.0, std::abs(S[j]));
    Sp[j] += step;
    const auto e = ctx.q_vector(to_std(Sp));
    ++rep.evaluations;
    J.col(j) = (to_vec(e.q) - q) / step;
  }

  for (int it = 1;; ++it) {
    if (qinf(to_std(q)) <= p.controls.q_tol) {
      rep.converged = true;
      break;
    }
    if (it > p.controls.max_outer) {
      rep.message = "budget exhausted after " + std::to_string(p.controls.max_outer) + " outer iterations";
      break;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
    const auto sv = svd.singularValues();
    rep.jacobian_condition = sv(0) / sv(k - 1);
    if (!(sv(k - 1) > 0.0) || rep.jacobian_condition > 1e12) {
      rep.message = "singular Jacobian (condition " + format_double(rep.jacobian_condition) + ")";
      break;
    }
    Vec step = -J.fullPivLu().solve(q);
    const double scale = std::max({1.0, std::abs(S[0]), S.tail(k - 1).cwiseAbs().maxCoeff()});
    const double radius = p.controls.trust_radius * scale;
    if (step.norm() > radius) step *= radius / step.norm();
    if (S[0] + step[0] == 0.0 || (S[0] + step[0]) * S[0] < 0.0) step *= 0.5 * std::abs(S[0]) / std::abs(step[0]);
    // damped acceptance
    bool accepted = false;
    Vec Sn, qn;
    MatchContext::Evaluation en;
    for (int damp = 0; damp < 6; ++damp) {
      Sn = S + step;
      en = ctx.q_vector(to_std(Sn));
      ++rep.evaluations;
      qn = to_vec(en.q);
      if (qn.cwiseAbs().maxCoeff() < q.cwiseAbs().maxCoeff()) {
        accepted = true;
        break;
      }
      record(it, Sn, en, false);
      step *= 0.5;
    }
    if (!accepted) {
      rep.message = "no decrease along the quasi-Newton direction";
      break;
    }
    const Vec dq = qn - q;
    J += ((dq - J * step) * step.transpose()) / step.squaredNorm();
    S = Sn;
    q = qn;
    ev = std::move(en);
    record(it, S, ev, true);
  }
  rep.S = to_std(S);
  rep.q = to_std(q);
  rep.glue = std::move(ev.glue);
  return rep;
}

}  // namespace scglue
