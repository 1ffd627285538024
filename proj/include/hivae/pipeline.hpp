#pragma once

// Orchestration behind the command-line tool: configuration, artifact
// layout, and the simulate / train / eval / report steps.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/eval.hpp"
#include "hivae/graph.hpp"
#include "hivae/model.hpp"
#include "hivae/sim.hpp"

namespace hivae {

inline const std::vector<std::string> kModelTypes = {"hivae", "btom", "extended_btom", "gru", "lstm", "tomnet"};

struct ModelSpec {
  std::string name;
  std::string type;
  nlohmann::json options = nlohmann::json::object();  // type-specific fields
};

struct ExperimentConfig {
  std::vector<double> fractions = {0.25, 0.5, 0.75, 0.95};
  int false_goal_intervals = 10;
  double near_radius = 0.0;  // 0 = 1.5 x mean edge length
  double drift_kl_threshold = 1.0;
  int wilcoxon_trajectories = 10;  // first n test episodes; 0 = all
  std::string wilcoxon_reference = "hivae";
};

struct RunConfig {
  std::uint64_t master_seed = 7;
  std::filesystem::path output_dir = "hivae_out";
  int threads = 1;
  std::optional<std::filesystem::path> graph_path;  // load instead of generating
  GridGraphSpec graph;                               // seed 0 = derived from master_seed
  SimulationParams simulation;
  std::vector<ModelSpec> models;
  ExperimentConfig experiments;

  void validate() const;
  const ModelSpec& model(const std::string& name) const;  // ConfigError if unknown
};

// Defaults: every model type once, named after its type.
RunConfig default_run_config();
// Unknown fields and type errors raise ConfigError with the field path.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// File locations under output_dir.
struct ArtifactPaths {
  std::filesystem::path root;
  std::filesystem::path graph() const { return root / "graph.json"; }
  std::filesystem::path dataset() const { return root / "dataset.jsonl"; }
  std::filesystem::path dataset_header() const { return root / "dataset.header.json"; }
  std::filesystem::path drift_dataset() const { return root / "drift_dataset.jsonl"; }
  std::filesystem::path drift_header() const { return root / "drift_dataset.header.json"; }
  std::filesystem::path checkpoint(const std::string& model) const { return root / "models" / (model + ".json"); }
  std::filesystem::path loss_trace(const std::string& model) const { return root / "models" / (model + ".loss.csv"); }
  std::filesystem::path report_dir() const { return root / "report"; }
};

// Model with seeds resolved: explicit "seed" option wins, else derived from
// the master seed and the model name.
std::unique_ptr<GoalInferenceModel> make_model(const ModelSpec& spec, std::shared_ptr<const SpatialGraph> graph,
                                               std::uint64_t master_seed, int threads);

SpatialGraph build_graph(const RunConfig& c);

struct SimulationOutput {
  std::shared_ptr<const SpatialGraph> graph;
  Dataset dataset;
};
SimulationOutput simulate(const RunConfig& c);

enum class Experiment { kBrier, kFalseGoal, kDrift, kAll };
Experiment parse_experiment(const std::string& name);

// Commands. Each writes under c.output_dir and prints a short summary to `log`.
void cmd_simulate(const RunConfig& c, std::ostream& log);
void cmd_train(const RunConfig& c, const std::string& model_name, std::ostream& log);
EvalReport cmd_eval(const RunConfig& c, Experiment which, std::ostream& log);
void cmd_report(const std::filesystem::path& report_json, const std::filesystem::path& out_dir, std::ostream& log);
EvalReport cmd_run_all(const RunConfig& c, std::ostream& log);

// Plain-text model x column table.
std::string format_table(const EvalReport& r);

}  // namespace hivae
