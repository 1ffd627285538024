// Command-line entry point: simulate | train | eval | report | run-all.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "hivae/error.hpp"
#include "hivae/pipeline.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<int> agents;
  std::optional<int> episodes;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("-o,--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads");
  cmd->add_option("--agents", o.agents, "number of simulated agents");
  cmd->add_option("--episodes", o.episodes, "episodes per agent");
}

// flag > file > default
hivae::RunConfig resolve(const Overrides& o) {
  hivae::RunConfig c = o.config_path.empty() ? hivae::default_run_config() : hivae::load_run_config(o.config_path);
  if (o.seed) c.master_seed = *o.seed;
  if (o.out) c.output_dir = *o.out;
  if (o.threads) c.threads = *o.threads;
  if (o.agents) c.simulation.num_agents = *o.agents;
  if (o.episodes) c.simulation.episodes_per_agent = *o.episodes;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Goal inference from partial trajectories: simulation, training and evaluation"};
  app.require_subcommand(1);

  Overrides sim_o, train_o, eval_o, all_o;
  auto* sim = app.add_subcommand("simulate", "generate the graph and trajectory dataset");
  add_common(sim, sim_o);

  auto* train = app.add_subcommand("train", "train or fit one configured model");
  std::string model_name;
  train->add_option("model", model_name, "model name from the config")->required();
  add_common(train, train_o);

  auto* eval = app.add_subcommand("eval", "run experiments over every configured model");
  std::string experiment = "all";
  eval->add_option("experiment", experiment, "brier | false-goal | drift | all");
  add_common(eval, eval_o);

  auto* report = app.add_subcommand("report", "re-render CSV tables from a stored JSON report");
  std::string report_in, report_out;
  report->add_option("input", report_in, "report.json")->required();
  report->add_option("-o,--out", report_out, "output directory (defaults to the report's directory)");

  auto* all = app.add_subcommand("run-all", "simulate, train every model, then evaluate everything");
  add_common(all, all_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      hivae::cmd_simulate(resolve(sim_o), std::cout);
    } else if (*train) {
      hivae::cmd_train(resolve(train_o), model_name, std::cout);
    } else if (*eval) {
      const auto which = hivae::parse_experiment(experiment);
      hivae::cmd_eval(resolve(eval_o), which, std::cout);
    } else if (*report) {
      const std::filesystem::path in(report_in);
      hivae::cmd_report(in, report_out.empty() ? in.parent_path() : std::filesystem::path(report_out), std::cout);
    } else if (*all) {
      hivae::cmd_run_all(resolve(all_o), std::cout);
    }
  } catch (const hivae::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hivae::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const hivae::DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
