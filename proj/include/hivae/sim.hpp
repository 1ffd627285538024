#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/graph.hpp"
#include "hivae/rng.hpp"

namespace hivae {

struct AgentProfile {
  int agent_id = 0;
  std::vector<double> preferences;  // over graph goal list, sums to 1
  double rationality_temperature = 0.2;

  bool operator==(const AgentProfile&) const = default;
};

struct Episode {
  int agent_id = 0;
  int episode_id = 0;
  std::vector<NodeId> path;
  std::vector<int> timestamps;  // 1..T
  NodeId origin = 0;
  NodeId goal = 0;
  // Set on truncated prefixes: `goal` is the ground-truth label and must not
  // be shown to inference models.
  bool goal_hidden = false;

  std::size_t length() const { return path.size(); }
  bool operator==(const Episode&) const = default;
};

enum class Split { kTrain, kTest };

struct SimulationParams {
  int num_agents = 10;
  int episodes_per_agent = 100;
  double dirichlet_alpha = 0.5;
  double temperature = 0.2;
  int k_paths = 5;

  bool operator==(const SimulationParams&) const = default;
};

struct Dataset {
  std::string graph_hash;
  std::uint64_t master_seed = 0;
  SimulationParams params;
  std::vector<AgentProfile> profiles;
  std::vector<Episode> episodes;  // sorted by (agent_id, episode_id)
  std::vector<Split> split;       // parallel to episodes

  std::vector<Episode> select(Split which) const;
  bool operator==(const Dataset&) const = default;
};

// Throws DataError if the episode is inconsistent with the graph.
void validate_episode(const SpatialGraph& g, const Episode& e);
void validate_dataset(const SpatialGraph& g, const Dataset& d);

// Symmetric Dirichlet(alpha) draw over the goal list, one stream per agent.
std::vector<AgentProfile> sample_agent_profiles(const SpatialGraph& g, int num_agents,
                                                double dirichlet_alpha, std::uint64_t seed,
                                                double temperature = 0.2);

std::vector<double> sample_dirichlet(std::size_t dim, double alpha, RngStream& rng);

// Samples goal ~ preferences, origin uniformly among the other nodes, then one
// of the k shortest paths with P(path_j) proportional to
// exp(-length_j / (temperature * length_1)).
Episode generate_episode(const SpatialGraph& g, const AgentProfile& profile, int episode_id,
                         int k_paths, RngStream& rng);

// Episodes for every agent; each (agent, episode) uses its own derived stream
// so the result is independent of `threads`. The last 30% of each agent's
// episode ids form the test split.
Dataset generate_dataset(const SpatialGraph& g, const std::vector<AgentProfile>& profiles,
                         int episodes_per_agent, int k_paths, std::uint64_t master_seed,
                         int threads = 1);

// Number of test episodes out of n under the 70/30 per-agent split.
int test_count(int n);

struct DriftResult {
  std::vector<AgentProfile> profiles;
  std::vector<int> attempts;  // draws needed per agent
};

// Redraws each agent's preferences until KL(original || new) > kl_threshold.
DriftResult generate_drifted_profiles(const std::vector<AgentProfile>& profiles,
                                      double kl_threshold, double dirichlet_alpha,
                                      std::uint64_t seed, int max_attempts = 10000);

struct FalseGoalEpisode {
  Episode episode;
  NodeId false_goal = 0;
  std::size_t pass_index = 0;  // step of closest approach to false_goal
};

double default_near_radius(const SpatialGraph& g);

// Builds a route to the agent's most preferred goal that detours past its
// least preferred one. Origins are scanned by increasing id; routes that avoid
// stepping onto the false goal are preferred.
FalseGoalEpisode synthesize_false_goal_episode(const SpatialGraph& g, const AgentProfile& profile,
                                               double near_radius, int episode_id = 0);

// Prefix with ceil(fraction * T) steps (at least one). The goal is kept as a
// hidden label.
Episode truncate(const Episode& e, double fraction);
std::size_t prefix_length(std::size_t total, double fraction);

// KL(p || q) with q clamped at 1e-12 and renormalised.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);

std::size_t argmax_index(const std::vector<double>& v);
std::size_t argmin_index(const std::vector<double>& v);

// Dataset files: JSON-lines episodes plus a JSON header sidecar. Episode
// lines keep the key order agent, episode, origin, goal, path, ts, split.
nlohmann::ordered_json episode_to_json(const Episode& e, Split split);
nlohmann::json dataset_header_json(const Dataset& d);
void save_dataset(const Dataset& d, const std::filesystem::path& jsonl,
                  const std::filesystem::path& header);
Dataset load_dataset(const std::filesystem::path& jsonl, const std::filesystem::path& header);

nlohmann::json profile_to_json(const AgentProfile& p);
AgentProfile profile_from_json(const nlohmann::json& j);

}  // namespace hivae
