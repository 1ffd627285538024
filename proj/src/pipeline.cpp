#include "hivae/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "hivae/baselines.hpp"
#include "hivae/checkpoint.hpp"
#include "hivae/error.hpp"
#include "hivae/json_fields.hpp"
#include "hivae/vae.hpp"

namespace hivae {

namespace {

std::uint64_t name_key(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  return h;
}

bool is_btom(const std::string& type) { return type == "btom" || type == "extended_btom"; }

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("threads: must be >= 1");
  if (simulation.num_agents < 1) throw ConfigError("simulation.agents: must be >= 1");
  if (simulation.episodes_per_agent < 1) throw ConfigError("simulation.episodes: must be >= 1");
  if (!(simulation.dirichlet_alpha > 0.0)) throw ConfigError("simulation.alpha: must be > 0");
  if (!(simulation.temperature > 0.0)) throw ConfigError("simulation.temperature: must be > 0");
  if (simulation.k_paths < 1) throw ConfigError("simulation.k_paths: must be >= 1");
  if (experiments.fractions.empty()) throw ConfigError("experiments.fractions: must not be empty");
  for (double f : experiments.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("experiments.fractions: values must lie in (0, 1]");
  if (experiments.false_goal_intervals < 1) throw ConfigError("experiments.false_goal_intervals: must be >= 1");
  if (experiments.near_radius < 0.0) throw ConfigError("experiments.near_radius: must be >= 0");
  if (experiments.drift_kl_threshold < 0.0) throw ConfigError("experiments.drift_kl_threshold: must be >= 0");
  if (experiments.wilcoxon_trajectories < 0) throw ConfigError("experiments.wilcoxon_trajectories: must be >= 0");
  if (models.empty()) throw ConfigError("models: at least one model is required");
  std::set<std::string> names;
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto& m = models[i];
    const std::string where = "models[" + std::to_string(i) + "]";
    if (m.name.empty()) throw ConfigError(where + ".name: must not be empty");
    if (m.name.find_first_of("/\\") != std::string::npos || m.name == "." || m.name == "..")
      throw ConfigError(where + ".name: must be a plain file name");
    if (!names.insert(m.name).second) throw ConfigError(where + ".name: duplicate model name '" + m.name + "'");
    if (std::find(kModelTypes.begin(), kModelTypes.end(), m.type) == kModelTypes.end())
      throw ConfigError(where + ".type: unknown model type '" + m.type + "'");
  }
}

const ModelSpec& RunConfig::model(const std::string& name) const {
  for (const auto& m : models)
    if (m.name == name) return m;
  throw ConfigError("unknown model '" + name + "'");
}

RunConfig default_run_config() {
  RunConfig c;
  for (const auto& t : kModelTypes) c.models.push_back({t, t, nlohmann::json::object()});
  return c;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c = default_run_config();
  require_keys(j, "config", {"master_seed", "output_dir", "threads", "graph", "simulation", "models", "experiments"});
  read_field(j, "master_seed", c.master_seed, "config");
  std::string out = c.output_dir.string();
  read_field(j, "output_dir", out, "config");
  c.output_dir = out;
  read_field(j, "threads", c.threads, "config");

  if (j.contains("graph")) {
    const auto& g = j.at("graph");
    require_keys(g, "graph",
                 {"path", "grid_width", "grid_height", "diagonal_probability", "jitter", "spacing", "num_goals", "seed"});
    if (g.contains("path") && !g.at("path").is_null()) {
      std::string p;
      read_field(g, "path", p, "graph");
      c.graph_path = p;
    }
    read_field(g, "grid_width", c.graph.grid_width, "graph");
    read_field(g, "grid_height", c.graph.grid_height, "graph");
    read_field(g, "diagonal_probability", c.graph.diagonal_probability, "graph");
    read_field(g, "jitter", c.graph.jitter, "graph");
    read_field(g, "spacing", c.graph.spacing, "graph");
    read_field(g, "num_goals", c.graph.num_goals, "graph");
    read_field(g, "seed", c.graph.seed, "graph");
  }
  if (j.contains("simulation")) {
    const auto& s = j.at("simulation");
    require_keys(s, "simulation", {"agents", "episodes", "alpha", "temperature", "k_paths"});
    read_field(s, "agents", c.simulation.num_agents, "simulation");
    read_field(s, "episodes", c.simulation.episodes_per_agent, "simulation");
    read_field(s, "alpha", c.simulation.dirichlet_alpha, "simulation");
    read_field(s, "temperature", c.simulation.temperature, "simulation");
    read_field(s, "k_paths", c.simulation.k_paths, "simulation");
  }
  if (j.contains("models")) {
    const auto& ms = j.at("models");
    if (!ms.is_array()) throw ConfigError("models: expected an array");
    c.models.clear();
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const std::string where = "models[" + std::to_string(i) + "]";
      const auto& m = ms[i];
      if (!m.is_object()) throw ConfigError(where + ": expected an object");
      ModelSpec spec;
      read_field(m, "type", spec.type, where);
      if (spec.type.empty()) throw ConfigError(where + ".type: required");
      spec.name = spec.type;
      read_field(m, "name", spec.name, where);
      spec.options = m;
      spec.options.erase("type");
      spec.options.erase("name");
      c.models.push_back(std::move(spec));
    }
  }
  if (j.contains("experiments")) {
    const auto& e = j.at("experiments");
    require_keys(e, "experiments",
                 {"fractions", "false_goal_intervals", "near_radius", "drift_kl_threshold", "wilcoxon_trajectories",
                  "wilcoxon_reference"});
    read_field(e, "fractions", c.experiments.fractions, "experiments");
    read_field(e, "false_goal_intervals", c.experiments.false_goal_intervals, "experiments");
    read_field(e, "near_radius", c.experiments.near_radius, "experiments");
    read_field(e, "drift_kl_threshold", c.experiments.drift_kl_threshold, "experiments");
    read_field(e, "wilcoxon_trajectories", c.experiments.wilcoxon_trajectories, "experiments");
    read_field(e, "wilcoxon_reference", c.experiments.wilcoxon_reference, "experiments");
  }
  c.validate();
  // Surface model option errors at load time rather than mid-run.
  for (std::size_t i = 0; i < c.models.size(); ++i) {
    const auto& m = c.models[i];
    const std::string where = "models[" + std::to_string(i) + "]";
    try {
      if (m.type == "hivae")
        model_config_from_json(m.options, where).validate();
      else if (is_btom(m.type))
        btom_config_from_json(m.options, where).validate();
      else
        baseline_config_from_json(m.options, where).validate();
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      if (msg.rfind(where, 0) == 0) throw;
      throw ConfigError(where + " (" + m.name + "): " + msg);
    }
  }
  return c;
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : c.models) {
    nlohmann::json entry = m.options;
    entry["name"] = m.name;
    entry["type"] = m.type;
    models.push_back(entry);
  }
  nlohmann::json graph = {{"grid_width", c.graph.grid_width},
                          {"grid_height", c.graph.grid_height},
                          {"diagonal_probability", c.graph.diagonal_probability},
                          {"jitter", c.graph.jitter},
                          {"spacing", c.graph.spacing},
                          {"num_goals", c.graph.num_goals},
                          {"seed", c.graph.seed}};
  graph["path"] = c.graph_path ? nlohmann::json(c.graph_path->string()) : nlohmann::json(nullptr);
  return {{"master_seed", c.master_seed},
          {"output_dir", c.output_dir.string()},
          {"threads", c.threads},
          {"graph", graph},
          {"simulation",
           {{"agents", c.simulation.num_agents},
            {"episodes", c.simulation.episodes_per_agent},
            {"alpha", c.simulation.dirichlet_alpha},
            {"temperature", c.simulation.temperature},
            {"k_paths", c.simulation.k_paths}}},
          {"models", models},
          {"experiments",
           {{"fractions", c.experiments.fractions},
            {"false_goal_intervals", c.experiments.false_goal_intervals},
            {"near_radius", c.experiments.near_radius},
            {"drift_kl_threshold", c.experiments.drift_kl_threshold},
            {"wilcoxon_trajectories", c.experiments.wilcoxon_trajectories},
            {"wilcoxon_reference", c.experiments.wilcoxon_reference}}}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Models

std::unique_ptr<GoalInferenceModel> make_model(const ModelSpec& spec, std::shared_ptr<const SpatialGraph> graph,
                                               std::uint64_t master_seed, int threads) {
  const std::uint64_t seed = derive_seed(master_seed, {stream::kModelInit, name_key(spec.name)});
  const std::string where = "models." + spec.name;
  if (spec.type == "hivae") {
    ModelConfig base;
    base.seed = seed;
    return std::make_unique<HiVaeModel>(std::move(graph), model_config_from_json(spec.options, where, base));
  }
  if (is_btom(spec.type)) {
    BtomConfig cfg = btom_config_from_json(spec.options, where);
    cfg.threads = threads;
    return std::make_unique<BtomModel>(std::move(graph), cfg, spec.type == "extended_btom");
  }
  BaselineConfig base;
  base.seed = seed;
  const BaselineConfig cfg = baseline_config_from_json(spec.options, where, base);
  if (spec.type == "gru") return std::make_unique<RnnModel>(std::move(graph), CellKind::kGru, cfg);
  if (spec.type == "lstm") return std::make_unique<RnnModel>(std::move(graph), CellKind::kLstm, cfg);
  if (spec.type == "tomnet") return std::make_unique<TomNetModel>(std::move(graph), cfg);
  throw ConfigError(where + ": unknown model type '" + spec.type + "'");
}

// ---------------------------------------------------------------------------
// Simulation

SpatialGraph build_graph(const RunConfig& c) {
  if (c.graph_path) return load_graph(*c.graph_path);
  GridGraphSpec spec = c.graph;
  if (spec.seed == 0) spec.seed = derive_seed(c.master_seed, {stream::kGraph});
  return generate_synthetic_graph(spec);
}

SimulationOutput simulate(const RunConfig& c) {
  auto graph = std::make_shared<const SpatialGraph>(build_graph(c));
  const auto& s = c.simulation;
  const auto profiles = sample_agent_profiles(*graph, s.num_agents, s.dirichlet_alpha,
                                              derive_seed(c.master_seed, {stream::kProfiles}), s.temperature);
  Dataset d = generate_dataset(*graph, profiles, s.episodes_per_agent, s.k_paths, c.master_seed, c.threads);
  d.params = s;
  return {std::move(graph), std::move(d)};
}

Experiment parse_experiment(const std::string& name) {
  if (name == "brier") return Experiment::kBrier;
  if (name == "false-goal") return Experiment::kFalseGoal;
  if (name == "drift") return Experiment::kDrift;
  if (name == "all") return Experiment::kAll;
  throw ConfigError("unknown experiment '" + name + "' (expected brier, false-goal, drift or all)");
}

namespace {

struct Workspace {
  ArtifactPaths paths;
  std::shared_ptr<const SpatialGraph> graph;
  Dataset dataset;
};

Workspace open_workspace(const RunConfig& c) {
  Workspace w{ArtifactPaths{c.output_dir}, nullptr, {}};
  if (!std::filesystem::exists(w.paths.graph()) || !std::filesystem::exists(w.paths.dataset()))
    throw DataError("no dataset under " + c.output_dir.string() + " (run `simulate` first)");
  w.graph = std::make_shared<const SpatialGraph>(load_graph(w.paths.graph()));
  w.dataset = load_dataset(w.paths.dataset(), w.paths.dataset_header());
  validate_dataset(*w.graph, w.dataset);
  return w;
}

std::string loss_csv(const std::vector<EpochStats>& trace) {
  std::ostringstream os;
  os << "epoch,total,goal_ce,kl,recon\n";
  for (const auto& s : trace)
    os << s.epoch << ',' << nlohmann::json(s.total).dump() << ',' << nlohmann::json(s.goal_ce).dump() << ','
       << nlohmann::json(s.kl).dump() << ',' << nlohmann::json(s.recon).dump() << '\n';
  return os.str();
}

std::unique_ptr<GoalInferenceModel> load_trained(const RunConfig& c, const Workspace& w, const ModelSpec& spec,
                                                 const std::vector<Episode>& train) {
  const auto path = w.paths.checkpoint(spec.name);
  if (!std::filesystem::exists(path))
    throw DataError("missing checkpoint for model '" + spec.name + "' (" + path.string() + "); run `train " +
                    spec.name + "` first");
  const nlohmann::json doc = read_json_file(path);
  auto model = make_model(spec, w.graph, c.master_seed, c.threads);
  if (auto* b = dynamic_cast<BtomModel*>(model.get())) {
    b->load_json(doc);
    return model;
  }
  // Architecture comes from the checkpoint so a later config edit cannot
  // silently mismatch the stored tensors.
  ModelSpec stored = spec;
  if (!doc.contains("config") || !doc.at("config").is_object())
    throw DataError(path.string() + ": checkpoint has no config object");
  stored.options = doc.at("config");
  model = make_model(stored, w.graph, c.master_seed, c.threads);
  auto& reloaded = dynamic_cast<NeuralGoalModel&>(*model);
  reloaded.fit(train);
  load_checkpoint(reloaded, *w.graph, doc);
  return model;
}

std::vector<double> mean_over_fractions(const BrierCurve& curve, std::size_t limit) {
  const std::size_t n = std::min(limit, curve.per_episode.front().size());
  std::vector<double> out(n, 0.0);
  for (const auto& row : curve.per_episode)
    for (std::size_t i = 0; i < n; ++i) out[i] += row[i] / static_cast<double>(curve.per_episode.size());
  return out;
}

nlohmann::json reference_values() {
  // Published numbers for orientation only; the synthetic setup here does not
  // reproduce them.
  return {{"brier", {{"hivae", {0.1042, 0.1036, 0.1023, 0.1023}}, {"btom", {0.9555, nullptr, nullptr, 0.4204}}}},
          {"drift_95", {{"hivae", 0.0307}, {"extended_btom", 1.0222}}},
          {"wilcoxon", {{"W", 0}, {"z", -2.80}, {"p_below", 0.01}}}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Commands

void cmd_simulate(const RunConfig& c, std::ostream& log) {
  c.validate();
  const ArtifactPaths paths{c.output_dir};
  ensure_dir(paths.root);
  const auto out = simulate(c);
  save_graph(*out.graph, paths.graph());
  save_dataset(out.dataset, paths.dataset(), paths.dataset_header());
  std::size_t train = 0;
  for (Split s : out.dataset.split) train += s == Split::kTrain;
  log << "simulated " << out.dataset.episodes.size() << " episodes (" << train << " train, "
      << out.dataset.episodes.size() - train << " test) on graph " << out.dataset.graph_hash << " with "
      << out.graph->num_nodes() << " nodes, " << out.graph->num_goals() << " goals\n";
}

void cmd_train(const RunConfig& c, const std::string& model_name, std::ostream& log) {
  c.validate();
  const ModelSpec& spec = c.model(model_name);
  const Workspace w = open_workspace(c);
  ensure_dir(w.paths.root / "models");
  const auto train = w.dataset.select(Split::kTrain);
  auto model = make_model(spec, w.graph, c.master_seed, c.threads);
  model->fit(train);
  if (auto* b = dynamic_cast<BtomModel*>(model.get())) {
    write_json_file(w.paths.checkpoint(spec.name), b->to_json());
    log << "fitted " << spec.name << " (" << spec.type << "): prior table for " << b->priors().agents.size()
        << " agents\n";
    return;
  }
  auto& neural = dynamic_cast<NeuralGoalModel&>(*model);
  const auto samples = neural.training_samples(train);
  const auto trace = train_model(neural, samples, neural.train_config());
  write_json_file(w.paths.checkpoint(spec.name), checkpoint_json(neural, *w.graph));
  write_text(w.paths.loss_trace(spec.name), loss_csv(trace));
  log << "trained " << spec.name << " (" << spec.type << "): " << trace.size() << " epochs, " << samples.size()
      << " samples, loss " << fixed(trace.front().total) << " -> " << fixed(trace.back().total) << "\n";
}

EvalReport cmd_eval(const RunConfig& c, Experiment which, std::ostream& log) {
  c.validate();
  const Workspace w = open_workspace(c);
  const auto train = w.dataset.select(Split::kTrain);
  const auto test = w.dataset.select(Split::kTest);
  const auto& ex = c.experiments;
  const bool do_brier = which == Experiment::kBrier || which == Experiment::kAll;
  const bool do_false = which == Experiment::kFalseGoal || which == Experiment::kAll;
  const bool do_drift = which == Experiment::kDrift || which == Experiment::kAll;

  EvalReport report;
  report.fractions = ex.fractions;
  report.metadata["master_seed"] = c.master_seed;
  report.metadata["graph_hash"] = w.dataset.graph_hash;
  report.metadata["config"] = run_config_to_json(c);
  report.metadata["config"].erase("output_dir");
  report.metadata["config"].erase("threads");
  report.metadata["test_episodes"] = test.size();
  report.metadata["btom_likelihood"] = "Boltzmann step likelihood over shortest-path cost-to-go (reconstruction)";
  report.metadata["reference_values"] = reference_values();

  std::vector<std::unique_ptr<GoalInferenceModel>> models;
  for (const auto& spec : c.models) {
    models.push_back(load_trained(c, w, spec, train));
    report.models.push_back(spec.name);
  }

  if (do_brier) {
    std::map<std::string, BrierCurve> curves;
    for (std::size_t m = 0; m < models.size(); ++m) {
      curves[c.models[m].name] = evaluate_brier_curve(*models[m], test, ex.fractions, c.threads);
      report.brier[c.models[m].name] = curves[c.models[m].name].means;
    }
    const std::string& ref = ex.wilcoxon_reference;
    if (curves.count(ref) && curves.size() > 1) {
      std::string best;
      double best_mean = 0.0;
      for (const auto& name : report.models) {
        if (name == ref) continue;
        const auto& v = report.brier[name];
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        if (best.empty() || mean < best_mean) best = name, best_mean = mean;
      }
      const std::size_t limit = ex.wilcoxon_trajectories == 0 ? test.size() : ex.wilcoxon_trajectories;
      try {
        const auto res = wilcoxon_signed_rank(mean_over_fractions(curves[ref], limit),
                                              mean_over_fractions(curves[best], limit));
        report.wilcoxon = WilcoxonReport{ref, best, res};
      } catch (const std::invalid_argument& e) {
        report.metadata["wilcoxon_skipped"] = e.what();
      }
    }
  }

  if (do_false) {
    const SpatialGraph& g = *w.graph;
    const double radius = ex.near_radius > 0.0 ? ex.near_radius : default_near_radius(g);
    std::vector<FalseGoalEpisode> episodes;
    nlohmann::json skipped = nlohmann::json::array();
    for (const auto& profile : w.dataset.profiles) {
      try {
        episodes.push_back(synthesize_false_goal_episode(g, profile, radius, profile.agent_id));
      } catch (const DataError& e) {
        skipped.push_back(e.what());
      }
    }
    report.metadata["false_goal"] = {{"episodes", episodes.size()}, {"near_radius", radius}, {"skipped", skipped}};
    if (!episodes.empty()) {
      std::vector<std::string> warnings;
      for (std::size_t m = 0; m < models.size(); ++m) {
        const auto curve = false_goal_curve(*models[m], episodes, ex.false_goal_intervals, c.threads);
        report.false_goal[c.models[m].name] = curve.means;
        if (m == 0) warnings = curve.warnings;
      }
      report.metadata["false_goal"]["warnings"] = warnings;
      for (const auto& msg : warnings) log << "warning: " << msg << "\n";
    }
  }

  if (do_drift) {
    const auto drift = generate_drifted_profiles(w.dataset.profiles, ex.drift_kl_threshold,
                                                 w.dataset.params.dirichlet_alpha,
                                                 derive_seed(w.dataset.master_seed, {stream::kDrift}));
    nlohmann::json kls = nlohmann::json::array();
    for (std::size_t a = 0; a < drift.profiles.size(); ++a) {
      const double kl = kl_divergence(w.dataset.profiles[a].preferences, drift.profiles[a].preferences);
      if (!(kl > ex.drift_kl_threshold) && ex.drift_kl_threshold > 0.0)
        throw DataError("drifted profile for agent " + std::to_string(a) + " has KL " + std::to_string(kl) +
                        " <= threshold");
      kls.push_back(kl);
    }
    Dataset drifted = generate_dataset(*w.graph, drift.profiles, w.dataset.params.episodes_per_agent,
                                       w.dataset.params.k_paths,
                                       derive_seed(w.dataset.master_seed, {stream::kDriftEpisodes}), c.threads);
    drifted.params = w.dataset.params;
    save_dataset(drifted, w.paths.drift_dataset(), w.paths.drift_header());
    report.metadata["drift"] = {{"kl", kls}, {"attempts", drift.attempts}, {"threshold", ex.drift_kl_threshold}};
    for (std::size_t m = 0; m < models.size(); ++m) {
      // Agents keep their identities; models that learned per-agent
      // knowledge from the original training split carry it over unchanged.
      report.drift[c.models[m].name] =
          drift_evaluation(*models[m], w.dataset, drifted, ex.fractions, c.threads).deltas;
    }
  }

  emit_report(report, w.paths.report_dir());
  log << format_table(report);
  return report;
}

void cmd_report(const std::filesystem::path& report_json, const std::filesystem::path& out_dir, std::ostream& log) {
  const EvalReport r = report_from_json(read_json_file(report_json));
  emit_report(r, out_dir);
  log << format_table(r);
}

EvalReport cmd_run_all(const RunConfig& c, std::ostream& log) {
  cmd_simulate(c, log);
  for (const auto& m : c.models) cmd_train(c, m.name, log);
  return cmd_eval(c, Experiment::kAll, log);
}

std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  std::size_t width = 5;
  for (const auto& m : r.models) width = std::max(width, m.size());
  auto section = [&](const char* title, const std::map<std::string, std::vector<double>>& table,
                     const std::vector<std::string>& cols) {
    if (table.empty()) return;
    os << title << "\n" << std::left << std::setw(static_cast<int>(width)) << "model";
    for (const auto& col : cols) os << "  " << std::right << std::setw(8) << col;
    os << "\n";
    for (const auto& m : r.models) {
      const auto it = table.find(m);
      if (it == table.end()) continue;
      os << std::left << std::setw(static_cast<int>(width)) << m;
      for (double v : it->second) os << "  " << std::right << std::setw(8) << fixed(v);
      os << "\n";
    }
  };
  std::vector<std::string> fcols;
  for (double f : r.fractions) fcols.push_back(std::to_string(static_cast<int>(std::lround(f * 100))) + "%");
  section("Brier score", r.brier, fcols);
  std::vector<std::string> icols;
  std::size_t n = 0;
  for (const auto& [m, v] : r.false_goal) n = std::max(n, v.size());
  for (std::size_t i = 1; i <= n; ++i) icols.push_back("i" + std::to_string(i));
  section("False-goal probability", r.false_goal, icols);
  section("Drift delta (drifted - original)", r.drift, fcols);
  if (r.wilcoxon) {
    const auto& w = r.wilcoxon->result;
    os << "Wilcoxon " << r.wilcoxon->model_a << " vs " << r.wilcoxon->model_b << ": W = " << w.w
       << ", z = " << fixed(w.z, 3) << ", p = " << fixed(w.p_value, 5) << (w.exact ? " (exact)" : " (normal)")
       << ", n = " << w.n << "\n";
  }
  return os.str();
}

}  // namespace hivae
