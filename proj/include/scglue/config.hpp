#pragma once
// Experiment configuration: a strict JSON schema with unknown keys rejected.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scglue/delaunay.hpp"
#include "scglue/errors.hpp"
#include "scglue/gluing.hpp"
#include "scglue/matching.hpp"
#include "scglue/models.hpp"
#include "scglue/weights.hpp"

namespace scglue {

struct GridConfig {
  std::string kind = "annulus";
  double r_in = 1.0, r_out = 4.0;
  int resolution = 24;
  int collar = 2;
};

struct GlueLocalConfig {
  std::optional<MetricSpec> perturbation;  ///< gbar = g + (sample(perturbation) - delta)
  KernelModel kernel = KernelModel::euclidean;
  GlueMode mode = GlueMode::newton;
};

struct GlueAeConfig {
  std::vector<double> lambdas{5.0, 10.0, 20.0};
  std::optional<std::vector<double>> slope_offset;  ///< fixed S for the lambda scaling of q
  MatchControls controls;
};

struct DelaunayConfig {
  std::vector<double> eps{0.5};
  double bound = 0.0;  ///< admissible neck sizes are eps < bound; 0 selects the neck bound
  double periods = 10.0;
  int samples = 2001;
  double step_tol = 1e-13;
  std::vector<int> windows{1};
  double perturbation_amp = 0.0;
  double perturbation_decay = 4.0;
  int nodes = 401;
};

struct MassConfig {
  std::vector<double> radii{25.0, 50.0, 100.0, 200.0};
  int order = 24;
  double leading_order = 1.0;
};

struct ExperimentConfig {
  int dimension = 3;
  GridConfig grid;
  WeightSpec weights = WeightSpec::defaults(3);
  CutoffSpec cutoff{2.0, 3.0, {}};
  SolverControls solver;
  std::optional<MetricSpec> g, gbar;
  GlueLocalConfig glue_local;
  GlueAeConfig glue_ae;
  DelaunayConfig delaunay;
  MassConfig mass;
  std::string output = "out";
  std::uint32_t seed = 1;

  GridPtr make_grid() const { return Grid::annulus(dimension, grid.r_in, grid.r_out, grid.resolution, grid.collar); }
};

namespace detail {

class Reader {
 public:
  Reader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) fail("expected an object");
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }))
        fail("unknown key '" + it.key() + "'");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const nlohmann::json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return where_ + "." + key; }

  void number(const char* key, double& out) const {
    if (!has(key)) return;
    if (!j_[key].is_number()) fail(std::string("'") + key + "' must be a number");
    out = j_[key].get<double>();
    if (!std::isfinite(out)) fail(std::string("'") + key + "' must be finite");
  }
  void positive(const char* key, double& out) const {
    number(key, out);
    if (has(key) && !(out > 0.0)) fail(std::string("'") + key + "' must be > 0");
  }
  void integer(const char* key, int& out) const {
    if (!has(key)) return;
    if (!j_[key].is_number_integer()) fail(std::string("'") + key + "' must be an integer");
    out = j_[key].get<int>();
  }
  void boolean(const char* key, bool& out) const {
    if (!has(key)) return;
    if (!j_[key].is_boolean()) fail(std::string("'") + key + "' must be true or false");
    out = j_[key].get<bool>();
  }
  void string(const char* key, std::string& out) const {
    if (!has(key)) return;
    if (!j_[key].is_string()) fail(std::string("'") + key + "' must be a string");
    out = j_[key].get<std::string>();
  }
  void numbers(const char* key, std::vector<double>& out, bool positive_entries = true) const {
    if (!has(key)) return;
    const auto& a = j_[key];
    if (a.is_number()) {
      out = {a.get<double>()};
    } else if (a.is_array() && !a.empty()) {
      out.clear();
      for (const auto& v : a) {
        if (!v.is_number()) fail(std::string("'") + key + "' entries must be numbers");
        out.push_back(v.get<double>());
      }
    } else {
      fail(std::string("'") + key + "' must be a number or a non-empty array of numbers");
    }
    for (double v : out)
      if (!std::isfinite(v) || (positive_entries && !(v > 0.0))) fail(std::string("'") + key + "' entries must be > 0");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(where_ + ": " + msg); }

 private:
  const nlohmann::json& j_;
  std::string where_;
};

inline MetricSpec metric_at(const Reader& r, const char* key) {
  try {
    return metric_spec_from_json(r.at(key));
  } catch (const ConfigError& e) {
    throw ConfigError(r.path(key) + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::Reader;
  ExperimentConfig c;
  Reader top(j, "config");
  top.allow({"dimension", "grid", "weights", "cutoff", "solver", "metrics", "glue_local", "glue_ae", "delaunay",
             "mass", "output", "seed"});
  top.integer("dimension", c.dimension);
  if (c.dimension < 2 || c.dimension > kMaxDim) top.fail("'dimension' must be in [2, 4]");
  c.weights = WeightSpec::defaults(c.dimension);
  top.string("output", c.output);
  if (top.has("seed")) {
    if (!j["seed"].is_number_unsigned()) top.fail("'seed' must be a non-negative integer");
    c.seed = j["seed"].get<std::uint32_t>();
  }

  if (top.has("grid")) {
    Reader r(j["grid"], "grid");
    r.allow({"kind", "r_in", "r_out", "resolution", "collar"});
    r.string("kind", c.grid.kind);
    if (c.grid.kind != "annulus") r.fail("'kind' must be \"annulus\"");
    r.positive("r_in", c.grid.r_in);
    r.positive("r_out", c.grid.r_out);
    r.integer("resolution", c.grid.resolution);
    r.integer("collar", c.grid.collar);
    if (!(c.grid.r_in < c.grid.r_out)) r.fail("need r_in < r_out");
    if (c.grid.resolution < 8) r.fail("'resolution' must be >= 8");
    if (c.grid.collar < 0) r.fail("'collar' must be >= 0");
  }

  if (top.has("weights")) {
    Reader r(j["weights"], "weights");
    r.allow({"a", "s", "x_cut", "smoothing"});
    r.integer("a", c.weights.a);
    r.positive("s", c.weights.s);
    r.positive("x_cut", c.weights.x_cut);
    r.number("smoothing", c.weights.smoothing);
    try {
      c.weights.validate();
    } catch (const DomainError& e) {
      r.fail(e.what());
    }
  }

  if (top.has("cutoff")) {
    Reader r(j["cutoff"], "cutoff");
    r.allow({"r1", "r2", "second"});
    r.positive("r1", c.cutoff.r1);
    r.positive("r2", c.cutoff.r2);
    if (r.has("second")) {
      std::vector<double> s;
      r.numbers("second", s);
      if (s.size() != 2 || !(s[0] < s[1])) r.fail("'second' must be [r1, r2] with r1 < r2");
      c.cutoff.scalar = std::make_pair(s[0], s[1]);
    }
  }
  if (!(c.grid.r_in < c.cutoff.r1 && c.cutoff.r1 < c.cutoff.r2 && c.cutoff.r2 < c.grid.r_out))
    top.fail("cutoff radii must satisfy r_in < r1 < r2 < r_out");

  if (top.has("solver")) {
    Reader r(j["solver"], "solver");
    r.allow({"newton_max", "newton_tol", "linear_max", "linear_tol", "use_frozen_adjoint", "mode"});
    r.integer("newton_max", c.solver.newton_max);
    r.positive("newton_tol", c.solver.newton_tol);
    r.integer("linear_max", c.solver.linear_max);
    r.positive("linear_tol", c.solver.linear_tol);
    r.boolean("use_frozen_adjoint", c.solver.use_frozen_adjoint);
    std::string mode = "newton";
    r.string("mode", mode);
    if (mode == "picard") c.solver.mode = GlueMode::picard;
    else if (mode != "newton") r.fail("'mode' must be \"newton\" or \"picard\"");
    try {
      c.solver.validate();
    } catch (const ConfigError& e) {
      r.fail(e.what());
    }
  }

  if (top.has("metrics")) {
    Reader r(j["metrics"], "metrics");
    r.allow({"g", "gbar"});
    if (r.has("g")) c.g = detail::metric_at(r, "g");
    if (r.has("gbar")) c.gbar = detail::metric_at(r, "gbar");
    for (const auto* m : {&c.g, &c.gbar})
      if (*m && (*m)->n != c.dimension) r.fail("metric dimension differs from 'dimension'");
  }

  if (top.has("glue_local")) {
    Reader r(j["glue_local"], "glue_local");
    r.allow({"perturbation", "kernel"});
    if (r.has("perturbation")) {
      c.glue_local.perturbation = detail::metric_at(r, "perturbation");
      if (c.glue_local.perturbation->kind != ModelKind::bump) r.fail("'perturbation' must be a bump metric");
    }
    if (r.has("kernel")) {
      std::string k;
      r.string("kernel", k);
      if (k != "euclidean" && k != "custom") r.fail("'kernel' must be \"euclidean\" or \"custom\"");
      c.glue_local.kernel = kernel_model_from_string(k);
    }
  }

  if (top.has("glue_ae")) {
    Reader r(j["glue_ae"], "glue_ae");
    r.allow({"lambdas", "slope_offset", "max_outer", "q_tol", "fd_step", "trust_radius"});
    r.numbers("lambdas", c.glue_ae.lambdas);
    if (r.has("slope_offset")) {
      std::vector<double> s;
      r.numbers("slope_offset", s, false);
      if (s.size() != static_cast<std::size_t>(c.dimension + 1)) r.fail("'slope_offset' must have dimension + 1 entries");
      c.glue_ae.slope_offset = s;
    }
    r.integer("max_outer", c.glue_ae.controls.max_outer);
    r.positive("q_tol", c.glue_ae.controls.q_tol);
    r.positive("fd_step", c.glue_ae.controls.fd_step);
    r.positive("trust_radius", c.glue_ae.controls.trust_radius);
    if (c.glue_ae.controls.max_outer < 1) r.fail("'max_outer' must be >= 1");
  }

  if (top.has("delaunay")) {
    Reader r(j["delaunay"], "delaunay");
    r.allow({"eps", "bound", "periods", "samples", "step_tol", "windows", "perturbation", "nodes"});
    r.numbers("eps", c.delaunay.eps);
    r.positive("bound", c.delaunay.bound);
    r.positive("periods", c.delaunay.periods);
    r.integer("samples", c.delaunay.samples);
    r.positive("step_tol", c.delaunay.step_tol);
    r.integer("nodes", c.delaunay.nodes);
    if (c.delaunay.samples < 2) r.fail("'samples' must be >= 2");
    if (r.has("windows")) {
      const auto& a = r.at("windows");
      if (!a.is_array() || a.empty()) r.fail("'windows' must be a non-empty array of integers");
      c.delaunay.windows.clear();
      for (const auto& v : a) {
        if (!v.is_number_integer() || v.get<int>() < 1) r.fail("'windows' entries must be integers >= 1");
        c.delaunay.windows.push_back(v.get<int>());
      }
    }
    if (r.has("perturbation")) {
      Reader p(r.at("perturbation"), "delaunay.perturbation");
      p.allow({"amp", "decay"});
      p.number("amp", c.delaunay.perturbation_amp);
      p.positive("decay", c.delaunay.perturbation_decay);
    }
  }
  if (c.dimension >= 3) {
    const double nb = neck_bound(c.dimension);
    if (c.delaunay.bound == 0.0) c.delaunay.bound = nb;
    if (c.delaunay.bound > nb) top.fail("delaunay.bound exceeds the neck bound " + format_double(nb));
    for (double e : c.delaunay.eps)
      if (!(e < c.delaunay.bound))
        top.fail("delaunay.eps = " + format_double(e) + " is not below the bound " + format_double(c.delaunay.bound));
  }

  if (top.has("mass")) {
    Reader r(j["mass"], "mass");
    r.allow({"radii", "order", "leading_order"});
    r.numbers("radii", c.mass.radii);
    r.integer("order", c.mass.order);
    r.positive("leading_order", c.mass.leading_order);
    if (c.mass.order < 4) r.fail("'order' must be >= 4");
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

}  // namespace scglue
