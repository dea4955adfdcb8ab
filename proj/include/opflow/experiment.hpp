#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "opflow/dynamics.hpp"
#include "opflow/edge_list.hpp"
#include "opflow/equilibrium.hpp"
#include "opflow/error.hpp"
#include "opflow/graph.hpp"
#include "opflow/io.hpp"
#include "opflow/models.hpp"
#include "opflow/parallel.hpp"
#include "opflow/random.hpp"

namespace opflow {

inline constexpr const char* kConfigSchema = "opflow.experiment/1";
inline constexpr const char* kManifestSchema = "opflow.manifest/1";

// ---------------------------------------------------------------------------
// Config types

/// Per-node parameter vector.
///
/// JSON forms: a number (constant), an array (explicit list),
/// {"two_group": {"first": a, "rest": b}} (group 1 gets a, everyone else b),
/// or {"file": "path"} (whitespace separated numbers, one per node).
struct ValueSpec {
  enum class Kind { constant, two_group, list, file };
  Kind kind = Kind::constant;
  double value = 1.0;
  double first = 1.0;
  double rest = 1.0;
  std::vector<double> values;
  std::string path;

  static ValueSpec constant(double v) {
    ValueSpec s;
    s.value = v;
    return s;
  }
  static ValueSpec two_group(double first, double rest) {
    ValueSpec s;
    s.kind = Kind::two_group;
    s.first = first;
    s.rest = rest;
    return s;
  }
};

struct GraphSpec {
  std::string generator = "er";  // er | sbm | core_periphery | complete | edge_list
  std::string name;              // label for output files; defaults to the generator
  std::size_t n = 150;
  double p = 0.08;               // er, core_periphery
  std::vector<std::size_t> sizes{50, 100};
  double p_in = 0.2;
  double p_out = 0.02;
  std::string path;              // edge_list
  Indexing indexing = Indexing::zero;
  bool symmetrize = true;
  bool weights = true;

  std::string label() const { return name.empty() ? generator : name; }
};

/// Group 1 is the first `split` nodes (or a seeded random subset of that
/// size when `randomize`). Without an explicit split, the group holds
/// floor(fraction * n) nodes.
struct Partition {
  std::optional<std::size_t> split;
  double fraction = 1.0 / 3.0;
  bool randomize = false;
};

struct ExperimentConfig {
  std::string schema = kConfigSchema;
  GraphSpec graph;
  std::string model = "nfj";  // abelson | taylor | nfj | fj
  std::string coupling = "normalized";
  double p = 1.0;
  ValueSpec u = ValueSpec::constant(1.0);
  ValueSpec sigma = ValueSpec::constant(1.0);
  ValueSpec lambda = ValueSpec::constant(0.5);
  Partition partition;
  std::vector<std::size_t> pinned;
  ValueSpec x0 = ValueSpec::constant(1.0);
  IntegratorConfig integrator;
  SolverConfig solver;
  std::size_t nash_grid = 1001;
  bool discrete = false;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
};

// ---------------------------------------------------------------------------
// JSON conversion

namespace detail {

inline const char* indexing_name(Indexing i) { return i == Indexing::one ? "one" : "zero"; }

inline const char* method_name(Method m) {
  return m == Method::rk4_adaptive ? "rk4_adaptive" : "rk4_fixed";
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const std::string& where) {
  if (!j.is_object()) throw Error(Errc::config_error, where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(Errc::config_error, "unknown key '" + key + "' in " + where);
    }
  }
}

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(Errc::config_error, where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline json to_json(const ValueSpec& s) {
  switch (s.kind) {
    case ValueSpec::Kind::constant: return s.value;
    case ValueSpec::Kind::two_group:
      return {{"two_group", {{"first", s.first}, {"rest", s.rest}}}};
    case ValueSpec::Kind::list: return s.values;
    case ValueSpec::Kind::file: return {{"file", s.path}};
  }
  return nullptr;
}

inline ValueSpec value_spec_from_json(const json& j, const std::string& where) {
  ValueSpec s;
  if (j.is_number()) {
    s.value = j.get<double>();
  } else if (j.is_array()) {
    s.kind = ValueSpec::Kind::list;
    for (const auto& v : j) {
      if (!v.is_number()) throw Error(Errc::config_error, where + " list must be numeric");
      s.values.push_back(v.get<double>());
    }
  } else if (j.is_object() && j.contains("two_group")) {
    detail::reject_unknown_keys(j, {"two_group"}, where);
    const json& g = j.at("two_group");
    detail::reject_unknown_keys(g, {"first", "rest"}, where + ".two_group");
    s.kind = ValueSpec::Kind::two_group;
    detail::read_field(g, "first", s.first, where);
    detail::read_field(g, "rest", s.rest, where);
  } else if (j.is_object() && j.contains("file")) {
    detail::reject_unknown_keys(j, {"file"}, where);
    s.kind = ValueSpec::Kind::file;
    detail::read_field(j, "file", s.path, where);
  } else {
    throw Error(Errc::config_error, where + ": expected number, array, two_group or file");
  }
  return s;
}

inline json to_json(const GraphSpec& g) {
  json j{{"generator", g.generator}};
  if (!g.name.empty()) j["name"] = g.name;
  if (g.generator == "er") {
    j["n"] = g.n;
    j["p"] = g.p;
  } else if (g.generator == "sbm") {
    j["sizes"] = g.sizes;
    j["p_in"] = g.p_in;
    j["p_out"] = g.p_out;
  } else if (g.generator == "core_periphery") {
    j["n"] = g.n;
    j["p"] = g.p;
  } else if (g.generator == "complete") {
    j["n"] = g.n;
  } else {
    j["path"] = g.path;
    j["indexing"] = detail::indexing_name(g.indexing);
    j["symmetrize"] = g.symmetrize;
    j["weights"] = g.weights;
  }
  return j;
}

inline GraphSpec graph_spec_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"generator", "name", "n", "p", "sizes", "p_in", "p_out", "path",
                                  "indexing", "symmetrize", "weights"},
                              "graph");
  GraphSpec g;
  detail::read_field(j, "generator", g.generator, "graph");
  detail::read_field(j, "name", g.name, "graph");
  detail::read_field(j, "n", g.n, "graph");
  detail::read_field(j, "p", g.p, "graph");
  detail::read_field(j, "sizes", g.sizes, "graph");
  detail::read_field(j, "p_in", g.p_in, "graph");
  detail::read_field(j, "p_out", g.p_out, "graph");
  detail::read_field(j, "path", g.path, "graph");
  detail::read_field(j, "symmetrize", g.symmetrize, "graph");
  detail::read_field(j, "weights", g.weights, "graph");
  if (j.contains("indexing")) {
    std::string idx;
    detail::read_field(j, "indexing", idx, "graph");
    if (idx != "zero" && idx != "one") {
      throw Error(Errc::config_error, "graph.indexing must be 'zero' or 'one'");
    }
    g.indexing = idx == "one" ? Indexing::one : Indexing::zero;
  }
  return g;
}

inline json to_json(const IntegratorConfig& c) {
  return {{"dt", c.dt},
          {"t_end", c.t_end},
          {"method", detail::method_name(c.method)},
          {"stop_tol", c.stop_tol},
          {"record_stride", c.record_stride},
          {"box_tol", c.box_tol},
          {"stability_cap", c.stability_cap}};
}

inline IntegratorConfig integrator_from_json(const json& j) {
  detail::reject_unknown_keys(
      j, {"dt", "t_end", "method", "stop_tol", "record_stride", "box_tol", "stability_cap"},
      "integrator");
  IntegratorConfig c;
  detail::read_field(j, "dt", c.dt, "integrator");
  detail::read_field(j, "t_end", c.t_end, "integrator");
  detail::read_field(j, "stop_tol", c.stop_tol, "integrator");
  detail::read_field(j, "record_stride", c.record_stride, "integrator");
  detail::read_field(j, "box_tol", c.box_tol, "integrator");
  detail::read_field(j, "stability_cap", c.stability_cap, "integrator");
  if (j.contains("method")) {
    std::string m;
    detail::read_field(j, "method", m, "integrator");
    if (m != "rk4_fixed" && m != "rk4_adaptive") {
      throw Error(Errc::config_error, "integrator.method must be rk4_fixed or rk4_adaptive");
    }
    c.method = m == "rk4_adaptive" ? Method::rk4_adaptive : Method::rk4_fixed;
  }
  return c;
}

inline json to_json(const SolverConfig& c) {
  return {{"tol", c.tol},
          {"max_iter", c.max_iter},
          {"armijo", c.armijo},
          {"max_halvings", c.max_halvings},
          {"starts", c.starts},
          {"flow_fallback", c.flow_fallback}};
}

inline SolverConfig solver_from_json(const json& j) {
  detail::reject_unknown_keys(
      j, {"tol", "max_iter", "armijo", "max_halvings", "starts", "flow_fallback"}, "solver");
  SolverConfig c;
  detail::read_field(j, "tol", c.tol, "solver");
  detail::read_field(j, "max_iter", c.max_iter, "solver");
  detail::read_field(j, "armijo", c.armijo, "solver");
  detail::read_field(j, "max_halvings", c.max_halvings, "solver");
  detail::read_field(j, "starts", c.starts, "solver");
  detail::read_field(j, "flow_fallback", c.flow_fallback, "solver");
  return c;
}

/// Full serialization: every field is written, so the output re-parses into
/// an identical config.
inline json to_json(const ExperimentConfig& c) {
  json partition{{"fraction", c.partition.fraction}, {"randomize", c.partition.randomize}};
  if (c.partition.split) partition["split"] = *c.partition.split;
  return {{"schema", c.schema},
          {"graph", to_json(c.graph)},
          {"model", c.model},
          {"coupling", c.coupling},
          {"p", c.p},
          {"u", to_json(c.u)},
          {"sigma", to_json(c.sigma)},
          {"lambda", to_json(c.lambda)},
          {"partition", partition},
          {"pinned", c.pinned},
          {"x0", to_json(c.x0)},
          {"integrator", to_json(c.integrator)},
          {"solver", to_json(c.solver)},
          {"nash_grid", c.nash_grid},
          {"discrete", c.discrete},
          {"steps", c.steps},
          {"seed", c.seed},
          {"output_dir", c.output_dir}};
}

inline ExperimentConfig config_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"schema", "graph", "model", "coupling", "p", "u", "sigma",
                                  "lambda", "partition", "pinned", "x0", "integrator", "solver",
                                  "nash_grid", "discrete", "steps", "seed", "output_dir"},
                              "config");
  ExperimentConfig c;
  if (!j.contains("schema")) throw Error(Errc::config_error, "config lacks a schema field");
  detail::read_field(j, "schema", c.schema, "config");
  if (c.schema != kConfigSchema) {
    throw Error(Errc::config_error,
                "unsupported schema '" + c.schema + "', expected " + kConfigSchema);
  }
  if (j.contains("graph")) c.graph = graph_spec_from_json(j.at("graph"));
  detail::read_field(j, "model", c.model, "config");
  detail::read_field(j, "coupling", c.coupling, "config");
  detail::read_field(j, "p", c.p, "config");
  if (j.contains("u")) c.u = value_spec_from_json(j.at("u"), "u");
  if (j.contains("sigma")) c.sigma = value_spec_from_json(j.at("sigma"), "sigma");
  if (j.contains("lambda")) c.lambda = value_spec_from_json(j.at("lambda"), "lambda");
  if (j.contains("x0")) c.x0 = value_spec_from_json(j.at("x0"), "x0");
  if (j.contains("partition")) {
    const json& pj = j.at("partition");
    detail::reject_unknown_keys(pj, {"split", "fraction", "randomize"}, "partition");
    if (pj.contains("split") && !pj.at("split").is_null()) {
      std::size_t split = 0;
      detail::read_field(pj, "split", split, "partition");
      c.partition.split = split;
    }
    detail::read_field(pj, "fraction", c.partition.fraction, "partition");
    detail::read_field(pj, "randomize", c.partition.randomize, "partition");
  }
  detail::read_field(j, "pinned", c.pinned, "config");
  if (j.contains("integrator")) c.integrator = integrator_from_json(j.at("integrator"));
  if (j.contains("solver")) c.solver = solver_from_json(j.at("solver"));
  detail::read_field(j, "nash_grid", c.nash_grid, "config");
  detail::read_field(j, "discrete", c.discrete, "config");
  detail::read_field(j, "steps", c.steps, "config");
  detail::read_field(j, "seed", c.seed, "config");
  detail::read_field(j, "output_dir", c.output_dir, "config");
  return c;
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return to_json(a) == to_json(b);
}

/// Applies `key.path=value` to a config document. The value is parsed as
/// JSON when possible and taken as a string otherwise.
inline void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(Errc::config_error, "override '" + assignment + "' is not key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
    if (!node->is_object()) throw Error(Errc::config_error, "cannot descend into '" + key + "'");
    node = &(*node)[parts[k]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw Error(Errc::config_error, "cannot descend into '" + key + "'");
  (*node)[parts.back()] = std::move(value);
}

inline ExperimentConfig load_config(const std::filesystem::path& path,
                                    const std::vector<std::string>& overrides = {}) {
  json doc = read_json(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Instantiation

struct Instance {
  Network net;
  std::vector<int> groups;  // 1 for the first group, 2 otherwise
  Model model;
  Vector x0;
};

inline Network build_network(const GraphSpec& g, std::uint64_t seed) {
  if (g.generator == "er") return erdos_renyi(g.n, g.p, seed);
  if (g.generator == "sbm") return stochastic_block_model(g.sizes, g.p_in, g.p_out, seed);
  if (g.generator == "core_periphery") return core_periphery(g.n, g.p, seed);
  if (g.generator == "complete") return complete_graph(g.n);
  if (g.generator == "edge_list") {
    if (g.path.empty()) throw Error(Errc::config_error, "graph.path is required for edge_list");
    if (!std::filesystem::exists(g.path)) {
      throw Error(Errc::missing_dataset, "edge list not found: " + g.path);
    }
    return load_edge_list(g.path, {g.indexing, g.symmetrize, g.weights});
  }
  throw Error(Errc::config_error, "unknown graph generator '" + g.generator + "'");
}

inline std::vector<int> build_groups(const Partition& part, std::size_t n, std::uint64_t seed) {
  const std::size_t split =
      part.split ? *part.split
                 : static_cast<std::size_t>(std::floor(part.fraction * static_cast<double>(n)));
  if (split > n) {
    throw Error(Errc::config_error,
                "group split " + std::to_string(split) + " exceeds node count " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (part.randomize) {
    Rng rng = Rng(seed).split(1);
    rng.shuffle(order);
  }
  std::vector<int> groups(n, 2);
  for (std::size_t k = 0; k < split; ++k) groups[order[k]] = 1;
  return groups;
}

inline Vector resolve(const ValueSpec& s, const std::vector<int>& groups, const char* what) {
  const auto n = static_cast<Eigen::Index>(groups.size());
  Vector v(n);
  switch (s.kind) {
    case ValueSpec::Kind::constant: v.setConstant(s.value); break;
    case ValueSpec::Kind::two_group:
      for (Eigen::Index i = 0; i < n; ++i) v(i) = groups[static_cast<std::size_t>(i)] == 1 ? s.first : s.rest;
      break;
    case ValueSpec::Kind::list:
      if (s.values.size() != groups.size()) {
        throw Error(Errc::config_error, std::string(what) + " list has " +
                                            std::to_string(s.values.size()) + " entries for " +
                                            std::to_string(groups.size()) + " nodes");
      }
      for (Eigen::Index i = 0; i < n; ++i) v(i) = s.values[static_cast<std::size_t>(i)];
      break;
    case ValueSpec::Kind::file: {
      std::ifstream in(s.path);
      if (!in) throw Error(Errc::config_error, std::string(what) + " file not found: " + s.path);
      std::vector<double> vals;
      std::string tok;
      while (in >> tok) {
        double x = 0.0;
        if (!detail::parse_number(tok, x)) {
          throw Error(Errc::config_error, std::string(what) + " file has a non-numeric entry");
        }
        vals.push_back(x);
      }
      ValueSpec list;
      list.kind = ValueSpec::Kind::list;
      list.values = std::move(vals);
      return resolve(list, groups, what);
    }
  }
  return v;
}

/// Referenced files must exist before anything runs.
inline void check_files(const ExperimentConfig& c) {
  auto check = [](const ValueSpec& s, const char* what) {
    if (s.kind == ValueSpec::Kind::file && !std::filesystem::exists(s.path)) {
      throw Error(Errc::config_error, std::string(what) + " file not found: " + s.path);
    }
  };
  check(c.u, "u");
  check(c.sigma, "sigma");
  check(c.lambda, "lambda");
  check(c.x0, "x0");
  if (c.graph.generator == "edge_list" && !std::filesystem::exists(c.graph.path)) {
    throw Error(Errc::missing_dataset, "edge list not found: " + c.graph.path);
  }
}

inline void validate_config(const ExperimentConfig& c) {
  static const std::set<std::string> models{"abelson", "taylor", "nfj", "fj"};
  static const std::set<std::string> generators{"er", "sbm", "core_periphery", "complete",
                                                "edge_list"};
  if (c.schema != kConfigSchema) throw Error(Errc::config_error, "unsupported schema");
  if (!models.count(c.model)) throw Error(Errc::config_error, "unknown model '" + c.model + "'");
  if (!generators.count(c.graph.generator)) {
    throw Error(Errc::config_error, "unknown graph generator '" + c.graph.generator + "'");
  }
  if (c.coupling != "normalized" && c.coupling != "raw") {
    throw Error(Errc::config_error, "coupling must be 'normalized' or 'raw'");
  }
  if (!(c.p > 0.0) || !std::isfinite(c.p)) throw Error(Errc::config_error, "p must be positive");
  if (!(c.partition.fraction >= 0.0 && c.partition.fraction <= 1.0)) {
    throw Error(Errc::config_error, "partition.fraction must lie in [0, 1]");
  }
  if (c.nash_grid < 2) throw Error(Errc::config_error, "nash_grid must be >= 2");
  if (c.discrete && c.steps == 0) throw Error(Errc::config_error, "steps must be >= 1");
  try {
    c.integrator.validate();
    c.solver.validate();
  } catch (const Error& e) {
    throw Error(Errc::config_error, e.what());
  }
  check_files(c);
}

inline Model build_model(const ExperimentConfig& c, const Network& net,
                         const std::vector<int>& groups) {
  const std::size_t n = net.size();
  if (c.model == "abelson") {
    return AbelsonParams{c.coupling == "raw" ? Coupling::raw : Coupling::normalized};
  }
  const Vector u = resolve(c.u, groups, "u");
  if (c.model == "taylor") return TaylorParams{resolve(c.lambda, groups, "lambda"), u};
  const Vector sigma = resolve(c.sigma, groups, "sigma");
  if (c.model == "fj") return LinearFjParams{u, sigma};
  NfjParams params{u, sigma, std::vector<bool>(n, false), c.p};
  for (std::size_t i : c.pinned) {
    if (i >= n) throw Error(Errc::config_error, "pinned index out of range", i);
    params.pinned[i] = true;
  }
  return params;
}

/// Validates the config, builds the network and resolves all per-node
/// vectors. Every check runs before any integration or solve.
inline Instance instantiate(const ExperimentConfig& c, std::optional<Network> net = std::nullopt) {
  validate_config(c);
  Network network = net ? std::move(*net) : build_network(c.graph, c.seed);
  std::vector<int> groups = build_groups(c.partition, network.size(), c.seed);
  Model model = build_model(c, network, groups);
  Vector x0 = resolve(c.x0, groups, "x0");
  try {
    validate(network, model);
  } catch (const Error& e) {
    if (e.code() == Errc::invalid_argument) throw Error(Errc::config_error, e.what());
    throw;
  }
  return {std::move(network), std::move(groups), std::move(model), std::move(x0)};
}

inline Trajectory run_simulation(const ExperimentConfig& c, const Instance& inst) {
  if (c.discrete) {
    return iterate_discrete(inst.net, inst.model, inst.x0, c.steps, c.integrator.record_stride);
  }
  return integrate(inst.net, inst.model, inst.x0, c.integrator);
}

// ---------------------------------------------------------------------------
// Figure presets

struct PresetOptions {
  std::string preset = "fig1";             // fig1 | fig2 | fig3
  std::optional<std::size_t> n;            // node count override (generated graphs)
  std::optional<double> pe;                // er / core_periphery edge probability
  std::optional<double> pin;
  std::optional<double> pout;
  std::vector<std::string> datasets;       // fig3: two edge-list files
  std::optional<double> t_end;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::size_t record_stride = 10;
};

inline constexpr double kPresetKappa[] = {10.0, 100.0};
inline constexpr double kPresetDelta[] = {0.5, 2.0};
inline constexpr const char* kPresetModels[] = {"fj", "nfj"};

inline std::vector<GraphSpec> preset_graphs(const PresetOptions& o) {
  std::vector<GraphSpec> graphs;
  if (o.preset == "fig1") {
    const std::size_t n = o.n.value_or(150);
    GraphSpec er;
    er.generator = "er";
    er.n = n;
    er.p = o.pe.value_or(0.08);
    GraphSpec sbm;
    sbm.generator = "sbm";
    sbm.sizes = {n / 3, n - n / 3};
    sbm.p_in = o.pin.value_or(0.2);
    sbm.p_out = o.pout.value_or(0.02);
    graphs = {er, sbm};
  } else if (o.preset == "fig2") {
    const std::size_t n = o.n.value_or(150);
    GraphSpec cp;
    cp.generator = "core_periphery";
    cp.n = n;
    cp.p = o.pe.value_or(0.01);
    GraphSpec full;
    full.generator = "complete";
    full.n = n;
    graphs = {cp, full};
  } else if (o.preset == "fig3") {
    if (o.datasets.size() != 2) {
      throw Error(Errc::missing_dataset, "fig3 needs two dataset paths (--dataset, twice)");
    }
    for (const auto& path : o.datasets) {
      if (!std::filesystem::exists(path)) {
        throw Error(Errc::missing_dataset, "dataset not found: " + path);
      }
      GraphSpec g;
      g.generator = "edge_list";
      g.name = std::filesystem::path(path).stem().string();
      g.path = path;
      g.weights = false;
      graphs.push_back(g);
    }
    if (graphs[0].name == graphs[1].name) graphs[1].name += "_2";
  } else {
    throw Error(Errc::config_error, "unknown preset '" + o.preset + "'");
  }
  return graphs;
}

/// Panel configs in manifest order: graph, then model, then (kappa, delta).
inline std::vector<ExperimentConfig> preset_panels(const PresetOptions& o) {
  std::vector<ExperimentConfig> panels;
  for (const auto& g : preset_graphs(o)) {
    for (const char* model : kPresetModels) {
      for (double kappa : kPresetKappa) {
        for (double delta : kPresetDelta) {
          ExperimentConfig c;
          c.graph = g;
          c.model = model;
          c.p = 1.0;
          c.u = ValueSpec::two_group(kappa, 1.0);
          c.sigma = ValueSpec::two_group(delta, 1.0);
          if (o.preset == "fig3") {
            c.partition.fraction = 0.5;
            c.partition.randomize = true;
          } else if (g.generator == "sbm") {
            c.partition.split = g.sizes.front();
          } else {
            c.partition.split = (o.n.value_or(150)) / 3;
          }
          c.integrator.t_end = o.t_end.value_or(100.0);
          c.integrator.record_stride = o.record_stride;
          c.integrator.stop_tol = std::numeric_limits<double>::min();
          c.seed = o.seed;
          c.output_dir = o.output_dir;
          panels.push_back(std::move(c));
        }
      }
    }
  }
  return panels;
}

inline std::string panel_file(const ExperimentConfig& c) {
  return c.graph.label() + "_" + c.model + "_k" + detail::format_double(c.u.first) + "_d" +
         detail::format_double(c.sigma.first) + ".csv";
}

struct PanelResult {
  ExperimentConfig config;
  GroupStats stats;
  double final_spread = 0.0;
  double initial_spread = 0.0;
};

struct ExperimentResult {
  std::vector<PanelResult> panels;
  json manifest;
};

/// Runs every panel of a preset and writes per-panel group-stats CSVs, one
/// edge list per graph and finally manifest.json. Nothing is written unless
/// all panels succeed.
inline ExperimentResult run_experiment(const PresetOptions& o, bool write = true) {
  const std::vector<GraphSpec> graphs = preset_graphs(o);
  const std::vector<ExperimentConfig> configs = preset_panels(o);
  for (const auto& c : configs) validate_config(c);

  std::vector<std::optional<Network>> nets(graphs.size());
  parallel_for(graphs.size(), [&](std::size_t g) { nets[g] = build_network(graphs[g], o.seed); });

  const std::size_t per_graph = configs.size() / graphs.size();
  ExperimentResult result;
  result.panels.resize(configs.size());
  parallel_for(configs.size(), [&](std::size_t k) {
    const ExperimentConfig& c = configs[k];
    const Instance inst = instantiate(c, *nets[k / per_graph]);
    const Trajectory traj = run_simulation(c, inst);
    PanelResult& r = result.panels[k];
    r.config = c;
    r.stats = group_stats(traj, inst.groups);
    r.initial_spread = traj.spread.front();
    r.final_spread = traj.spread.back();
  });

  const std::filesystem::path dir(o.output_dir);
  json manifest{{"schema", kManifestSchema},
                {"preset", o.preset},
                {"seed", o.seed},
                {"rows", graphs.size()},
                {"cols", std::size(kPresetKappa) * std::size(kPresetDelta)},
                {"models", {"fj", "nfj"}}};
  json graph_entries = json::array();
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    const std::string file = graphs[g].label() + ".edges";
    graph_entries.push_back({{"name", graphs[g].label()},
                             {"row", g},
                             {"edge_list", file},
                             {"n", nets[g]->size()},
                             {"edges", nets[g]->edge_count()}});
  }
  manifest["graphs"] = graph_entries;
  json panel_entries = json::array();
  for (std::size_t k = 0; k < configs.size(); ++k) {
    const ExperimentConfig& c = configs[k];
    const std::size_t within = k % per_graph;
    const std::size_t cols = std::size(kPresetKappa) * std::size(kPresetDelta);
    panel_entries.push_back({{"graph", c.graph.label()},
                             {"row", k / per_graph},
                             {"col", within % cols},
                             {"model", c.model},
                             {"kappa", c.u.first},
                             {"delta", c.sigma.first},
                             {"csv", panel_file(c)},
                             {"config", to_json(c)}});
  }
  manifest["panels"] = panel_entries;
  result.manifest = manifest;

  if (write) {
    std::filesystem::create_directories(dir);
    for (std::size_t g = 0; g < graphs.size(); ++g) {
      save_edge_list(dir / (graphs[g].label() + ".edges"), *nets[g]);
    }
    for (const auto& r : result.panels) {
      write_file(dir / panel_file(r.config),
                 [&](std::ostream& out) { write_group_stats_csv(out, r.stats); });
    }
    write_json(dir / "manifest.json", manifest);
  }
  return result;
}


// ---------------------------------------------------------------------------
// Solve and verify drivers

struct SolveOutcome {
  EquilibriumCertificate cert;
  json document;
  bool ok = false;
};

namespace detail {

// Damped-free Newton for the linear models, where one exact step suffices;
// iterated to the tolerance to absorb rounding.
template <class FMap>
Vector linear_newton(FMap&& f, const Matrix& jac, Vector x, const SolverConfig& cfg,
                     double scale, int& iterations) {
  Eigen::FullPivLU<Matrix> lu(jac);
  if (!lu.isInvertible()) throw Error(Errc::singular_system, "steady-state system is singular");
  for (iterations = 0; iterations < cfg.max_iter; ++iterations) {
    const Vector fx = f(x);
    if (fx.lpNorm<Eigen::Infinity>() <= cfg.tol * scale) return x;
    x -= lu.solve(fx);
  }
  const Vector fx = f(x);
  if (fx.lpNorm<Eigen::Infinity>() <= cfg.tol * scale) return x;
  throw Error(Errc::max_iter_exceeded, "linear Newton did not converge", std::nullopt,
              fx.lpNorm<Eigen::Infinity>());
}

inline std::pair<double, double> nash_range(const Vector& x, const Vector& u) {
  const double lo = std::min(x.minCoeff(), u.minCoeff());
  const double hi = std::max(x.maxCoeff(), u.maxCoeff());
  const double span = std::max(hi - lo, 1.0);
  return {lo - span, hi + span};
}

inline void certify_linear(EquilibriumCertificate& cert, const Matrix& jac) {
  const double norm = std::max(1.0, jac.cwiseAbs().maxCoeff());
  cert.m_matrix_ok = is_z_matrix(jac) && leading_minors_positive(jac, 1e-12 * norm);
}

}  // namespace detail

/// Solves for the steady state of the configured model and assembles the
/// certificate document. NFJ runs Newton from every multistart point,
/// certifies the Jacobian and checks the Nash conditions; the linear models
/// also report the distance to the closed-form solution.
inline SolveOutcome solve_config(const ExperimentConfig& c) {
  const Instance inst = instantiate(c);
  const Network& net = inst.net;
  SolveOutcome out;
  EquilibriumCertificate& cert = out.cert;
  SolverConfig scfg = c.solver;
  scfg.seed = c.seed;

  if (const auto* nfj = std::get_if<NfjParams>(&inst.model)) {
    cert = multistart_uniqueness(net, *nfj, scfg);
    const EquilibriumCertificate spectral = certify(net, *nfj, cert.x_star);
    cert.jac_min_eig = spectral.jac_min_eig;
    cert.m_matrix_ok = spectral.m_matrix_ok;
    cert.degenerate = spectral.degenerate;
    cert.certificates_agree = spectral.certificates_agree;
    const NashReport nash = check_nash(net, *nfj, cert.x_star, c.nash_grid);
    cert.nash_ok = nash.ok;
    out.document = certificate_json(cert, inst.model, c.seed);
    if (!nash.ok) {
      out.document["nash_violation"] = {{"agent", *nash.agent}, {"candidate", nash.candidate}};
    }
  } else if (const auto* taylor = std::get_if<TaylorParams>(&inst.model)) {
    const Vector closed = taylor_equilibrium(net, *taylor);
    const Matrix jac = taylor_jacobian(net, *taylor);
    const double scale =
        std::max(1.0, closed.lpNorm<Eigen::Infinity>() + taylor->u.lpNorm<Eigen::Infinity>());
    cert.x_star = detail::linear_newton([&](const Vector& x) { return taylor_f_map(net, *taylor, x); },
                                        jac, taylor->u, scfg, scale, cert.iterations);
    cert.residual = taylor_f_map(net, *taylor, cert.x_star).lpNorm<Eigen::Infinity>();
    cert.residual_scale = scale;
    cert.jac_min_eig = taylor_jacobian_check(net, *taylor);
    detail::certify_linear(cert, jac);
    const auto [lo, hi] = detail::nash_range(cert.x_star, taylor->u);
    cert.nash_ok = check_nash(net, inst.model, cert.x_star, c.nash_grid, lo, hi).ok;
    cert.starts = 1;
    out.document = certificate_json(cert, inst.model, c.seed);
    out.document["closed_form_discrepancy"] = (cert.x_star - closed).lpNorm<Eigen::Infinity>();
  } else if (const auto* fj = std::get_if<LinearFjParams>(&inst.model)) {
    const Vector closed = linear_fj_equilibrium(net, *fj);
    Matrix jac = laplacian(net);
    jac.diagonal() += fj->sigma;
    const double scale = std::max(
        1.0, jac.cwiseAbs().maxCoeff() * (closed.lpNorm<Eigen::Infinity>() + fj->u.lpNorm<Eigen::Infinity>()));
    cert.x_star = detail::linear_newton(
        [&](const Vector& x) { return Vector(-vector_field_linear_fj(net, *fj, x)); }, jac, fj->u,
        scfg, scale, cert.iterations);
    cert.residual = vector_field_linear_fj(net, *fj, cert.x_star).lpNorm<Eigen::Infinity>();
    cert.residual_scale = scale;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(jac, Eigen::EigenvaluesOnly);
    cert.jac_min_eig = eig.eigenvalues()(0);
    detail::certify_linear(cert, jac);
    const auto [lo, hi] = detail::nash_range(cert.x_star, fj->u);
    cert.nash_ok = check_nash(net, inst.model, cert.x_star, c.nash_grid, lo, hi).ok;
    cert.starts = 1;
    out.document = certificate_json(cert, inst.model, c.seed);
    out.document["closed_form_discrepancy"] = (cert.x_star - closed).lpNorm<Eigen::Infinity>();
  } else {
    throw Error(Errc::config_error,
                "solve needs a model with an isolated steady state (taylor, nfj or fj)");
  }
  out.document["iterations"] = cert.iterations;
  out.document["degenerate"] = cert.degenerate;
  out.document["residual_scale"] = cert.residual_scale;
  out.ok = cert.converged(c.solver.tol) && cert.m_matrix_ok && cert.nash_ok.value_or(false);
  return out;
}

struct Check {
  std::string name;
  bool ok = false;
  std::string detail;
};

/// Invariant suite for one config: trajectory properties of the model plus,
/// where a unique steady state exists, the equilibrium certificates.
inline std::vector<Check> verify_config(const ExperimentConfig& c) {
  const Instance inst = instantiate(c);
  std::vector<Check> checks;
  auto fmt = [](double v) { return detail::format_double(v); };

  IntegratorConfig icfg = c.integrator;
  icfg.record_stride = 1;
  const Trajectory traj = integrate(inst.net, inst.model, inst.x0, icfg);
  checks.push_back({"integrate", true,
                    "steps=" + std::to_string(traj.steps) +
                        " converged=" + (traj.converged ? "true" : "false")});

  if (!std::isnan(traj.energy.front())) {
    double worst = 0.0;
    for (std::size_t s = 1; s < traj.samples(); ++s) {
      const double slack = 1e-9 * std::max(1.0, std::abs(traj.energy[s - 1]));
      worst = std::max(worst, (traj.energy[s] - traj.energy[s - 1]) - slack);
    }
    checks.push_back({"energy_descent", worst <= 0.0, "max excess increase=" + fmt(std::max(0.0, worst))});
  }
  if (std::holds_alternative<AbelsonParams>(inst.model)) {
    double worst = 0.0;
    for (std::size_t s = 1; s < traj.samples(); ++s) {
      worst = std::max(worst, traj.spread[s] - traj.spread[s - 1]);
    }
    checks.push_back({"spread_monotone", worst <= 1e-10, "max increase=" + fmt(worst)});
    // The mean is conserved only when the coupling is symmetric; for the
    // normalized coupling the drift is reported.
    double drift = 0.0;
    for (double m : traj.mean) drift = std::max(drift, std::abs(m - traj.mean.front()));
    const bool raw = std::get<AbelsonParams>(inst.model).coupling == Coupling::raw;
    checks.push_back({"mean_drift", !raw || drift <= 1e-8 * std::max(1.0, std::abs(traj.mean.front())),
                      "drift=" + fmt(drift) + (raw ? "" : " (reported only)")});
  }

  if (const auto* nfj = std::get_if<NfjParams>(&inst.model)) {
    const BoundsReport bounds = monitor_bounds(traj, *nfj, inst.x0);
    checks.push_back({"invariant_box", bounds.transgression() <= icfg.box_tol,
                      "transgression=" + fmt(bounds.transgression())});
    SolverConfig scfg = c.solver;
    scfg.seed = c.seed;
    try {
      const EquilibriumCertificate root = multistart_uniqueness(inst.net, *nfj, scfg);
      const EquilibriumCertificate cert = certify(inst.net, *nfj, root.x_star);
      checks.push_back({"residual", cert.converged(scfg.tol), "residual=" + fmt(cert.residual)});
      checks.push_back({"multistart", true, "agreement=" + fmt(root.multistart_agreement)});
      checks.push_back({"m_matrix", cert.m_matrix_ok && cert.jac_min_eig > 0.0,
                        "jac_min_eig=" + fmt(cert.jac_min_eig)});
      const Vector xp = root.x_star.array().pow(nfj->p).matrix();
      const double lo = nfj->u.minCoeff();
      const double hi = nfj->u.maxCoeff();
      const double tol = 1e-9 * std::max(1.0, hi);
      checks.push_back({"steady_state_bounds",
                        xp.minCoeff() >= lo - tol && xp.maxCoeff() <= hi + tol,
                        "range=[" + fmt(xp.minCoeff()) + ", " + fmt(xp.maxCoeff()) + "]"});
      const NashReport nash = check_nash(inst.net, *nfj, root.x_star, c.nash_grid);
      checks.push_back({"nash", nash.ok, "max_gradient=" + fmt(nash.max_gradient)});
      if (traj.converged) {
        const double gap = (traj.final_state() - root.x_star).lpNorm<Eigen::Infinity>();
        checks.push_back({"ode_limit", gap <= 1e-6 * std::max(1.0, root.x_star.lpNorm<Eigen::Infinity>()),
                          "gap=" + fmt(gap)});
      }
    } catch (const Error& e) {
      checks.push_back({"equilibrium", false, e.what()});
    }
  } else if (const auto* taylor = std::get_if<TaylorParams>(&inst.model)) {
    if (taylor->well_posed() && traj.converged) {
      const Vector closed = taylor_equilibrium(inst.net, *taylor);
      const double gap = (traj.final_state() - closed).lpNorm<Eigen::Infinity>();
      checks.push_back({"closed_form_vs_ode", gap <= 1e-6, "gap=" + fmt(gap)});
    }
  } else if (const auto* fj = std::get_if<LinearFjParams>(&inst.model)) {
    if (traj.converged) {
      const Vector closed = linear_fj_equilibrium(inst.net, *fj);
      const double gap = (traj.final_state() - closed).lpNorm<Eigen::Infinity>();
      checks.push_back({"closed_form_vs_ode", gap <= 1e-6, "gap=" + fmt(gap)});
    }
  }
  return checks;
}

}  // namespace opflow
