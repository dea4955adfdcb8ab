// opflow command-line front end.
//
//   opflow generate er --n 150 --p 0.08 --seed 1 --out er.edges
//   opflow simulate config.json [--set model=fj ...]
//   opflow solve config.json
//   opflow experiment fig1 --out results/
//   opflow verify config.json
//
// Exit codes: 0 success / converged, 2 invalid input, 3 numerical failure or
// no convergence.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "opflow/opflow.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kNumerical = 3;

int exit_code_for(opflow::Errc code) {
  using opflow::Errc;
  switch (code) {
    case Errc::invalid_argument:
    case Errc::isolated_node:
    case Errc::parse_error:
    case Errc::negative_weight:
    case Errc::asymmetric_input:
    case Errc::division_by_zero_lambda:
    case Errc::missing_dataset:
    case Errc::config_error:
    case Errc::io_error:
      return kInvalid;
    default:
      return kNumerical;
  }
}

std::filesystem::path output_dir(const opflow::ExperimentConfig& cfg,
                                  const std::optional<std::string>& flag) {
  return flag ? std::filesystem::path(*flag) : std::filesystem::path(cfg.output_dir);
}

struct GenerateArgs {
  std::string kind;
  std::size_t n = 150;
  double p = 0.08;
  std::vector<std::size_t> sizes{50, 100};
  double pin = 0.2;
  double pout = 0.02;
  std::uint64_t seed = 1;
  int attempts = opflow::kDefaultGeneratorAttempts;
  std::string out;
  bool one_based = false;
};

int cmd_generate(const GenerateArgs& a) {
  opflow::Network net = [&] {
    if (a.kind == "er") return opflow::erdos_renyi(a.n, a.p, a.seed, a.attempts);
    if (a.kind == "sbm") {
      return opflow::stochastic_block_model(a.sizes, a.pin, a.pout, a.seed, a.attempts);
    }
    if (a.kind == "cp") return opflow::core_periphery(a.n, a.p, a.seed);
    return opflow::complete_graph(a.n);
  }();
  const auto indexing = a.one_based ? opflow::Indexing::one : opflow::Indexing::zero;
  if (a.out.empty() || a.out == "-") {
    opflow::write_edge_list(std::cout, net, indexing);
  } else {
    opflow::save_edge_list(a.out, net, indexing);
  }
  const opflow::DegreeData dd = opflow::degree_data(net);
  std::cerr << "n=" << net.size() << " edges=" << net.edge_count()
            << " fiedler=" << opflow::detail::format_double(dd.fiedler) << '\n';
  return kOk;
}

int cmd_simulate(const std::string& path, const std::vector<std::string>& sets,
                 const std::optional<std::string>& out_flag) {
  const opflow::ExperimentConfig cfg = opflow::load_config(path, sets);
  const opflow::Instance inst = opflow::instantiate(cfg);
  const opflow::Trajectory traj = opflow::run_simulation(cfg, inst);
  const auto dir = output_dir(cfg, out_flag);
  opflow::write_file(dir / "trajectory.csv",
                     [&](std::ostream& o) { opflow::write_trajectory_csv(o, traj); });
  opflow::write_file(dir / "summary.csv",
                     [&](std::ostream& o) { opflow::write_summary_csv(o, traj); });
  const opflow::GroupStats stats = opflow::group_stats(traj, inst.groups);
  opflow::write_file(dir / "groups.csv",
                     [&](std::ostream& o) { opflow::write_group_stats_csv(o, stats); });
  std::cout << "samples=" << traj.samples() << " steps=" << traj.steps
            << " converged=" << (traj.converged ? "true" : "false")
            << " spread=" << opflow::detail::format_double(traj.spread.back()) << '\n';
  if (cfg.discrete) return kOk;
  return traj.converged ? kOk : kNumerical;
}

int cmd_solve(const std::string& path, const std::vector<std::string>& sets,
              const std::optional<std::string>& out_flag) {
  const opflow::ExperimentConfig cfg = opflow::load_config(path, sets);
  const opflow::SolveOutcome outcome = opflow::solve_config(cfg);
  const auto dir = output_dir(cfg, out_flag);
  opflow::write_json(dir / "certificate.json", outcome.document);
  std::cout << outcome.document.dump(2) << '\n';
  return outcome.ok ? kOk : kNumerical;
}

int cmd_verify(const std::string& path, const std::vector<std::string>& sets) {
  const opflow::ExperimentConfig cfg = opflow::load_config(path, sets);
  bool all = true;
  for (const auto& c : opflow::verify_config(cfg)) {
    std::cout << (c.ok ? "PASS " : "FAIL ") << c.name << "  " << c.detail << '\n';
    all = all && c.ok;
  }
  return all ? kOk : kNumerical;
}

int cmd_experiment(const opflow::PresetOptions& opts) {
  const opflow::ExperimentResult result = opflow::run_experiment(opts);
  for (const auto& panel : result.manifest["panels"]) {
    std::cout << panel["csv"].get<std::string>() << '\n';
  }
  std::cout << (std::filesystem::path(opts.output_dir) / "manifest.json").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Opinion dynamics on networks: simulation, steady states and figure experiments"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Sample a graph and write its edge list");
  generate->add_option("kind", gen.kind, "Generator")
      ->required()
      ->check(CLI::IsMember({"er", "sbm", "cp", "complete"}));
  generate->add_option("--n", gen.n, "Node count");
  generate->add_option("--p", gen.p, "Edge probability (er, cp)");
  generate->add_option("--sizes", gen.sizes, "Block sizes (sbm)")->delimiter(',');
  generate->add_option("--pin", gen.pin, "Within-block probability (sbm)");
  generate->add_option("--pout", gen.pout, "Between-block probability (sbm)");
  generate->add_option("--seed", gen.seed, "Random seed");
  generate->add_option("--attempts", gen.attempts, "Resampling attempts for connectivity");
  generate->add_option("--out", gen.out, "Output path (stdout when omitted)");
  generate->add_flag("--one-based", gen.one_based, "Write 1-based node ids");

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::string> out_dir;
  auto add_config_options = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Experiment config (JSON)")->required();
    sub->add_option("--set", sets, "Override a config field, e.g. --set integrator.dt=0.005");
    sub->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  };
  auto* simulate = app.add_subcommand("simulate", "Integrate a configured model");
  add_config_options(simulate);
  auto* solve = app.add_subcommand("solve", "Solve and certify the steady state");
  add_config_options(solve);
  auto* verify = app.add_subcommand("verify", "Run the invariant suite on a config");
  verify->add_option("config", config_path, "Experiment config (JSON)")->required();
  verify->add_option("--set", sets, "Override a config field");

  opflow::PresetOptions preset;
  std::optional<std::size_t> n;
  std::optional<double> pe, pin, pout, t_end;
  auto* experiment = app.add_subcommand("experiment", "Run a figure preset");
  experiment->add_option("preset", preset.preset, "Preset")
      ->required()
      ->check(CLI::IsMember({"fig1", "fig2", "fig3"}));
  experiment->add_option("--n", n, "Node count for generated graphs");
  experiment->add_option("--pe", pe, "Edge probability (er, core-periphery)");
  experiment->add_option("--pin", pin, "Within-block probability (sbm)");
  experiment->add_option("--pout", pout, "Between-block probability (sbm)");
  experiment->add_option("--dataset", preset.datasets, "Edge-list file (fig3, give twice)");
  experiment->add_option("--t-end", t_end, "Time horizon");
  experiment->add_option("--seed", preset.seed, "Random seed");
  experiment->add_option("--stride", preset.record_stride, "Record every k-th step");
  experiment->add_option("--out", preset.output_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*generate) return cmd_generate(gen);
    if (*simulate) return cmd_simulate(config_path, sets, out_dir);
    if (*solve) return cmd_solve(config_path, sets, out_dir);
    if (*verify) return cmd_verify(config_path, sets);
    preset.n = n;
    preset.pe = pe;
    preset.pin = pin;
    preset.pout = pout;
    preset.t_end = t_end;
    return cmd_experiment(preset);
  } catch (const opflow::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const opflow::json::exception& e) {
    std::cerr << "error: ConfigError: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  }
}
