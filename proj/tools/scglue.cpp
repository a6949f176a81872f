#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "scglue/config.hpp"
#include "scglue/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scglue;

namespace {

enum Exit { kOk = 0, kFailed = 1, kConfig = 2, kSolver = 3, kHypothesis = 4 };

struct Options {
  std::string config;
  std::string out;
  std::string suite = "all";
  bool quiet = false;
  bool flip_sign = false;
};

struct Run {
  Options opt;
  ExperimentConfig cfg;
  fs::path out;

  void log(const std::string& msg) const {
    if (!opt.quiet) std::cerr << msg << '\n';
  }
};

Run prepare(const Options& opt, bool config_required) {
  Run r{opt, {}, {}};
  if (!opt.config.empty()) r.cfg = load_config(opt.config);
  else if (config_required) throw ConfigError("--config is required for this command");
  r.out = opt.out.empty() ? fs::path(r.cfg.output) : fs::path(opt.out);
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
}

const MetricSpec& need_g(const ExperimentConfig& c) {
  if (!c.g) throw ConfigError("metrics.g is required for this command");
  return *c.g;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

int cmd_verify(const Run& r) {
  VerifyOptions vo;
  vo.seed = r.cfg.seed;
  if (r.opt.flip_sign) vo.linearization_sign = -1.0;
  const auto rep = run_verify(r.opt.suite, vo);
  const std::string csv = rep.csv();
  if (!r.opt.out.empty() || !r.opt.config.empty()) write_text(r.out / ("verify_" + r.opt.suite + ".csv"), csv);
  if (!r.opt.quiet) std::cout << csv;
  if (const auto* f = rep.first_failure()) {
    std::cerr << "verify: FAILED " << f->id << " (measured " << format_double(f->measured) << ", required "
              << f->relation << ' ' << format_double(f->bound) << ")\n";
    return kFailed;
  }
  r.log("verify: " + std::to_string(rep.checks.size()) + " checks passed");
  return kOk;
}

int cmd_glue_local(const Run& r) {
  const auto& c = r.cfg;
  const auto grid = c.make_grid();
  const auto g = sample(need_g(c), grid);
  if (!c.gbar && !c.glue_local.perturbation) throw ConfigError("glue-local needs metrics.gbar or glue_local.perturbation");
  MetricField gbar = c.gbar ? sample(*c.gbar, grid) : g;
  if (c.glue_local.perturbation) gbar = add_perturbation(gbar, *c.glue_local.perturbation);
  SolverControls ctl = c.solver;
  GlueProblem P{g, gbar, c.cutoff, c.weights, c.glue_local.kernel, {}, ctl, nullptr};
  r.log("glue-local: " + std::to_string(grid->active_nodes().size()) + " active nodes");
  const auto rep = glue(P);

  CsvWriter trace({"iteration", "weighted", "l2", "max", "linear_iterations", "linear_residual"});
  for (const auto& t : rep.trace)
    trace.row(std::vector<std::string>{std::to_string(t.iteration), format_double(t.weighted), format_double(t.l2),
                                       format_double(t.max), std::to_string(t.linear_iterations),
                                       format_double(t.linear_residual)});
  trace.write(r.out / "trace.csv");
  write_raw(r.out / "fields" / "h.f64", rep.h, "h");
  write_raw(r.out / "fields" / "u.f64", rep.u, "u");
  write_raw(r.out / "fields" / "chi.f64", rep.chi, "chi");
  write_raw(r.out / "fields" / "R.f64", rep.R, "R");
  write_raw(r.out / "fields" / "R_chi.f64", rep.R_chi, "R_chi");
  write_raw(r.out / "fields" / "g_tilde.f64", rep.g_tilde.metric(), "g_tilde");

  const auto& last = rep.trace.back();
  json s{{"converged", rep.converged},
         {"iterations", rep.iterations},
         {"message", rep.message},
         {"weighted_residual", last.weighted},
         {"l2_residual", last.l2},
         {"max_residual", last.max},
         {"support_certificate", rep.support_certificate},
         {"collar_residual", rep.collar_residual},
         {"min_R", rep.min_R},
         {"min_R_inputs", rep.min_R_inputs},
         {"h_max", rep.h_max},
         {"q", rep.q},
         {"seed", c.seed}};
  write_json(r.out / "summary.json", s);
  r.log("glue-local: " + std::string(rep.converged ? "converged" : "NOT converged") + " in " +
        std::to_string(rep.iterations) + " iterations, weighted residual " + format_double(last.weighted));
  if (!rep.converged) {
    std::cerr << "glue-local: " << rep.message << '\n';
    return kSolver;
  }
  return kOk;
}

int cmd_glue_ae(const Run& r) {
  const auto& c = r.cfg;
  const auto& g = need_g(c);
  const int n = g.n;
  const auto base = [&](double lambda) {
    MatchProblem p;
    p.g = g;
    p.lambda = lambda;
    p.N = c.grid.resolution;
    p.r_in = c.grid.r_in;
    p.r_out = c.grid.r_out;
    p.r1 = c.cutoff.r1;
    p.r2 = c.cutoff.r2;
    p.weights = c.weights;
    p.solver = c.solver;
    p.controls = c.glue_ae.controls;
    return p;
  };
  // Hypotheses first, so that no solve runs on inadmissible input.
  {
    auto p = base(c.glue_ae.lambdas.front());
    MatchContext check(p);
    initial_guess(p);
  }

  std::vector<std::string> head{"lambda", "m"};
  for (int l = 1; l <= n; ++l) head.push_back("c" + std::to_string(l));
  head.insert(head.end(), {"q_inf", "abs_m_minus_mg", "evaluations", "converged"});
  CsvWriter trend(head);
  json runs = json::array();
  bool all = true;
  std::optional<double> mg = reference_mass(g);
  for (std::size_t k = 0; k < c.glue_ae.lambdas.size(); ++k) {
    const double lam = c.glue_ae.lambdas[k];
    r.log("glue-ae: lambda = " + format_double(lam));
    const auto rep = match(base(lam));
    const fs::path dir = r.out / ("lambda_" + std::to_string(k));
    write_text(dir / "match.csv", rep.csv());
    if (!mg) mg = mass_at_radius(g, 64.0 * c.glue_ae.lambdas.back());
    std::vector<std::string> row{format_double(lam)};
    for (double v : rep.S) row.push_back(format_double(v));
    row.push_back(format_double(max_abs(rep.q)));
    row.push_back(format_double(std::abs(rep.S[0] - *mg)));
    row.push_back(std::to_string(rep.evaluations));
    row.push_back(rep.converged ? "1" : "0");
    trend.row(row);
    json jr{{"lambda", lam},
            {"S", rep.S},
            {"S0", rep.S0},
            {"q", rep.q},
            {"converged", rep.converged},
            {"message", rep.message},
            {"evaluations", rep.evaluations},
            {"jacobian_condition", rep.jacobian_condition},
            {"support_certificate", rep.glue.support_certificate}};
    write_json(dir / "summary.json", jr);
    runs.push_back(jr);
    all = all && rep.converged;
  }
  trend.write(r.out / "trend.csv");
  json s{{"reference_mass", *mg}, {"runs", runs}, {"converged", all}};
  if (c.glue_ae.slope_offset) {
    CsvWriter slope({"lambda", "q_inf"});
    std::vector<double> ll, lq;
    for (double lam : c.glue_ae.lambdas) {
      MatchContext ctx(base(lam));
      const double qi = max_abs(ctx.q_vector(*c.glue_ae.slope_offset).q);
      slope.row(std::vector<double>{lam, qi});
      ll.push_back(std::log(lam));
      lq.push_back(std::log(qi));
    }
    slope.write(r.out / "slope.csv");
    if (ll.size() >= 2) {
      double mx = 0.0, my = 0.0;
      for (std::size_t i = 0; i < ll.size(); ++i) {
        mx += ll[i] / ll.size();
        my += lq[i] / ll.size();
      }
      double sxy = 0.0, sxx = 0.0;
      for (std::size_t i = 0; i < ll.size(); ++i) {
        sxy += (ll[i] - mx) * (lq[i] - my);
        sxx += (ll[i] - mx) * (ll[i] - mx);
      }
      s["q_slope"] = sxy / sxx;
      s["q_slope_expected"] = 2.0 - n;
    }
  }
  write_json(r.out / "summary.json", s);
  if (!all) {
    std::cerr << "glue-ae: matching did not converge at every lambda\n";
    return kSolver;
  }
  return kOk;
}

void check_neck(int n, double eps) {
  if (eps > cylinder_value(n))
    throw HypothesisError("neck size eps = " + format_double(eps) + " exceeds the cylinder value " +
                          format_double(cylinder_value(n)));
}

int cmd_delaunay(const Run& r) {
  const auto& c = r.cfg;
  const auto& d = c.delaunay;
  const int n = c.dimension;
  CsvWriter table({"eps", "T", "T_x", "u_max", "energy_drift", "return_error", "degenerate"});
  for (std::size_t k = 0; k < d.eps.size(); ++k) {
    check_neck(n, d.eps[k]);
    const auto pr = period(n, d.eps[k]);
    const auto o = ode_solve(n, d.eps[k], d.periods * pr.T, d.step_tol, d.samples);
    write_text(r.out / ("orbit_" + std::to_string(k) + ".csv"), o.csv());
    table.row(std::vector<std::string>{format_double(d.eps[k]), format_double(o.T), format_double(o.T_x),
                                       format_double(o.u_max), format_double(o.energy_drift),
                                       format_double(return_error(o)), o.degenerate ? "1" : "0"});
    r.log("delaunay: eps = " + format_double(d.eps[k]) + " energy drift " + format_double(o.energy_drift));
  }
  table.write(r.out / "orbits.csv");
  return kOk;
}

int cmd_glue_delaunay(const Run& r) {
  const auto& c = r.cfg;
  const auto& d = c.delaunay;
  const int n = c.dimension;
  CsvWriter table({"eps", "window", "eps_prime", "abs_shift", "q", "weighted_residual", "support_certificate",
                   "floor_limited", "converged"});
  json runs = json::array();
  bool all = true;
  for (std::size_t k = 0; k < d.eps.size(); ++k) {
    const double eps = d.eps[k];
    check_neck(n, eps);
    const auto source =
        d.perturbation_amp != 0.0 ? perturbed_delaunay_source(n, eps, d.perturbation_amp, d.perturbation_decay)
                                  : delaunay_source(n, eps);
    for (int w : d.windows) {
      DelaunayGlueControls ctl;
      ctl.window = w;
      ctl.nodes = d.nodes;
      ctl.weights = c.weights;
      const auto rep = glue_delaunay_1d(n, eps, source, ctl);
      const fs::path dir = r.out / ("eps_" + std::to_string(k) + "_window_" + std::to_string(w));
      write_text(dir / "trace.csv", rep.csv());
      write_text(dir / "profile.csv", rep.profile_csv());
      table.row(std::vector<std::string>{format_double(eps), std::to_string(w), format_double(rep.eps_prime),
                                         format_double(std::abs(rep.eps_prime - eps)), format_double(rep.q),
                                         format_double(rep.inner.weighted_residual),
                                         format_double(rep.inner.support_certificate),
                                         rep.inner.floor_limited ? "1" : "0", rep.converged ? "1" : "0"});
      runs.push_back({{"eps", eps},
                      {"window", w},
                      {"eps_prime", rep.eps_prime},
                      {"q", rep.q},
                      {"window_start", rep.window_start},
                      {"window_end", rep.window_end},
                      {"converged", rep.converged},
                      {"message", rep.message}});
      r.log("glue-delaunay: window " + std::to_string(w) + " eps' = " + format_double(rep.eps_prime));
      all = all && rep.converged;
    }
  }
  table.write(r.out / "windows.csv");
  write_json(r.out / "summary.json", json{{"runs", runs}, {"converged", all}});
  if (!all) {
    std::cerr << "glue-delaunay: no convergence for some window\n";
    return kSolver;
  }
  return kOk;
}

int cmd_mass(const Run& r) {
  const auto& c = r.cfg;
  const auto& g = need_g(c);
  const auto rep = asymptotic_report(g, c.mass.radii, c.mass.order, c.mass.leading_order);
  write_text(r.out / "ladder.csv", rep.csv());
  json s{{"mass_limit", rep.mass_limit},
         {"mass_limit_correction", rep.mass_limit_correction},
         {"com_limit", rep.com_limit},
         {"mass_differences", rep.mass_differences},
         {"omega", rep.omega}};
  write_json(r.out / "limits.json", s);
  r.log("mass: limit " + format_double(rep.mass_limit));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scalar curvature gluing experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config, "experiment config (JSON)");
  app.add_option("--out", opt.out, "output directory (overrides the config)");
  app.add_flag("--quiet", opt.quiet, "suppress progress output");
  app.add_flag("--flip-linearization-sign", opt.flip_sign)->group("");
  auto* verify = app.add_subcommand("verify", "run the invariant suites");
  verify->add_option("--suite", opt.suite, "all, curvature, operators, weights, gluing, asymptotics or delaunay");
  app.add_subcommand("glue-local", "glue two metrics across an annulus");
  app.add_subcommand("glue-ae", "match an asymptotically flat metric to Schwarzschild over a lambda ladder");
  app.add_subcommand("glue-delaunay", "glue onto a Delaunay end over successive windows");
  app.add_subcommand("delaunay", "integrate Delaunay orbits");
  app.add_subcommand("mass", "mass and center of mass over a radius ladder");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const Run r = prepare(opt, cmd != "verify");
    if (cmd == "verify") return cmd_verify(r);
    if (cmd == "glue-local") return cmd_glue_local(r);
    if (cmd == "glue-ae") return cmd_glue_ae(r);
    if (cmd == "glue-delaunay") return cmd_glue_delaunay(r);
    if (cmd == "delaunay") return cmd_delaunay(r);
    return cmd_mass(r);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const HypothesisError& e) {
    std::cerr << "hypothesis violation: " << e.what() << '\n';
    return kHypothesis;
  } catch (const SolverError& e) {
    std::cerr << "solver error: " << e.what() << '\n';
    return kSolver;
  } catch (const DomainError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}
