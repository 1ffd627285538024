#include "hivae/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "hivae/error.hpp"
#include "hivae/parallel.hpp"

namespace hivae {

std::vector<Episode> Dataset::select(Split which) const {
  std::vector<Episode> out;
  for (std::size_t i = 0; i < episodes.size(); ++i)
    if (split[i] == which) out.push_back(episodes[i]);
  return out;
}

void validate_episode(const SpatialGraph& g, const Episode& e) {
  const std::string where =
      "episode (agent " + std::to_string(e.agent_id) + ", id " + std::to_string(e.episode_id) + ")";
  if (e.path.empty()) throw DataError(where + ": empty path");
  if (e.timestamps.size() != e.path.size()) throw DataError(where + ": timestamp count mismatch");
  for (NodeId v : e.path)
    if (!g.valid_node(v)) throw DataError(where + ": unknown node " + std::to_string(v));
  if (e.path.front() != e.origin) throw DataError(where + ": path does not start at origin");
  if (!e.goal_hidden && e.path.back() != e.goal) throw DataError(where + ": path does not end at goal");
  if (!g.goal_index(e.goal)) throw DataError(where + ": goal is not in the goal set");
  for (std::size_t i = 0; i + 1 < e.path.size(); ++i) {
    if (!g.edge_length(e.path[i], e.path[i + 1]))
      throw DataError(where + ": step " + std::to_string(i) + " is not an edge");
    if (e.timestamps[i + 1] != e.timestamps[i] + 1)
      throw DataError(where + ": timestamps must increase by one");
  }
}

void validate_dataset(const SpatialGraph& g, const Dataset& d) {
  if (d.graph_hash != g.content_hash()) throw DataError("dataset was generated for a different graph");
  if (d.split.size() != d.episodes.size()) throw DataError("dataset split size mismatch");
  for (const auto& e : d.episodes) validate_episode(g, e);
}

std::vector<double> sample_dirichlet(std::size_t dim, double alpha, RngStream& rng) {
  if (!(alpha > 0.0)) throw ConfigError("dirichlet_alpha must be positive");
  std::vector<double> v(dim);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    double total = 0.0;
    for (auto& x : v) total += (x = rng.gamma(alpha));
    if (total > 0.0 && std::isfinite(total)) {
      for (auto& x : v) x /= total;
      return v;
    }
  }
  throw ConfigError("Dirichlet sampling underflowed; increase dirichlet_alpha");
}

std::vector<AgentProfile> sample_agent_profiles(const SpatialGraph& g, int num_agents,
                                                double dirichlet_alpha, std::uint64_t seed,
                                                double temperature) {
  if (num_agents < 1) throw ConfigError("num_agents must be at least 1");
  if (g.num_goals() == 0) throw ConfigError("graph has an empty goal set");
  if (!(temperature > 0.0)) throw ConfigError("rationality temperature must be positive");
  std::vector<AgentProfile> profiles;
  for (int a = 0; a < num_agents; ++a) {
    RngStream rng = RngStream::derive(seed, {stream::kProfiles, static_cast<std::uint64_t>(a)});
    profiles.push_back({a, sample_dirichlet(g.num_goals(), dirichlet_alpha, rng), temperature});
  }
  return profiles;
}

Episode generate_episode(const SpatialGraph& g, const AgentProfile& profile, int episode_id,
                         int k_paths, RngStream& rng) {
  if (profile.preferences.size() != g.num_goals())
    throw ConfigError("profile preference length does not match the goal set");
  if (k_paths < 1) throw ConfigError("k_paths must be at least 1");
  if (g.num_nodes() < 2) throw ConfigError("graph needs at least two nodes");
  constexpr int kMaxRetries = 100;
  NodeId goal = 0, origin = 0;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    goal = g.goals()[rng.categorical(profile.preferences)];
    origin = static_cast<NodeId>(rng.index(g.num_nodes() - 1));
    if (origin >= goal) ++origin;
    std::vector<PathResult> paths;
    try {
      paths = k_shortest_paths(g, origin, goal, static_cast<std::size_t>(k_paths));
    } catch (const NoPathError&) {
      continue;
    }
    const double shortest = paths.front().length;
    std::vector<double> weights;
    for (const auto& p : paths)
      weights.push_back(std::exp(-(p.length - shortest) / (profile.rationality_temperature * shortest)));
    const std::size_t pick = paths.size() == 1 ? 0 : rng.categorical(weights);

    Episode e;
    e.agent_id = profile.agent_id;
    e.episode_id = episode_id;
    e.path = std::move(paths[pick].nodes);
    e.timestamps.resize(e.path.size());
    for (std::size_t t = 0; t < e.path.size(); ++t) e.timestamps[t] = static_cast<int>(t) + 1;
    e.origin = origin;
    e.goal = goal;
    return e;
  }
  throw DataError("episode generation failed for agent " + std::to_string(profile.agent_id) +
                  ": last origin/goal pair (" + std::to_string(origin) + ", " +
                  std::to_string(goal) + ") unreachable after " + std::to_string(kMaxRetries) +
                  " retries");
}

int test_count(int n) { return static_cast<int>(std::lround(0.3 * n)); }

Dataset generate_dataset(const SpatialGraph& g, const std::vector<AgentProfile>& profiles,
                         int episodes_per_agent, int k_paths, std::uint64_t master_seed,
                         int threads) {
  if (episodes_per_agent < 1) throw ConfigError("episodes_per_agent must be at least 1");
  const std::size_t per_agent = static_cast<std::size_t>(episodes_per_agent);
  const std::size_t total = profiles.size() * per_agent;
  std::vector<Episode> episodes(total);

  parallel_for(total, threads, [&](std::size_t i) {
    const auto& profile = profiles[i / per_agent];
    const int episode_id = static_cast<int>(i % per_agent);
    RngStream rng = RngStream::derive(master_seed, {stream::kEpisodes,
                                                    static_cast<std::uint64_t>(profile.agent_id),
                                                    static_cast<std::uint64_t>(episode_id)});
    episodes[i] = generate_episode(g, profile, episode_id, k_paths, rng);
  });

  Dataset d;
  d.graph_hash = g.content_hash();
  d.master_seed = master_seed;
  d.params.num_agents = static_cast<int>(profiles.size());
  d.params.episodes_per_agent = episodes_per_agent;
  d.params.k_paths = k_paths;
  if (!profiles.empty()) d.params.temperature = profiles.front().rationality_temperature;
  d.profiles = profiles;
  const int n_test = test_count(episodes_per_agent);
  for (std::size_t i = 0; i < total; ++i) {
    const int episode_id = static_cast<int>(i % per_agent);
    d.split.push_back(episode_id >= episodes_per_agent - n_test ? Split::kTest : Split::kTrain);
  }
  d.episodes = std::move(episodes);
  return d;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: length mismatch (" + std::to_string(p.size()) +
                                " vs " + std::to_string(q.size()) + ")");
  constexpr double kEps = 1e-12;
  std::vector<double> qs(q.size());
  double total = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) total += (qs[i] = std::max(q[i], kEps));
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * std::log(p[i] / (qs[i] / total));
  }
  return std::max(0.0, kl);
}

DriftResult generate_drifted_profiles(const std::vector<AgentProfile>& profiles,
                                      double kl_threshold, double dirichlet_alpha,
                                      std::uint64_t seed, int max_attempts) {
  if (kl_threshold < 0.0) throw ConfigError("kl_threshold must be non-negative");
  DriftResult result;
  for (const auto& original : profiles) {
    RngStream rng = RngStream::derive(seed, {stream::kDrift, static_cast<std::uint64_t>(original.agent_id)});
    bool accepted = false;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      auto fresh = sample_dirichlet(original.preferences.size(), dirichlet_alpha, rng);
      if (kl_threshold == 0.0 || kl_divergence(original.preferences, fresh) > kl_threshold) {
        AgentProfile drifted = original;
        drifted.preferences = std::move(fresh);
        result.profiles.push_back(std::move(drifted));
        result.attempts.push_back(attempt);
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw DataError("drift infeasible for agent " + std::to_string(original.agent_id) +
                      ": no draw exceeded KL " + std::to_string(kl_threshold) + " in " +
                      std::to_string(max_attempts) + " attempts");
  }
  return result;
}

std::size_t argmax_index(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::size_t argmin_index(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

double default_near_radius(const SpatialGraph& g) { return 1.5 * g.mean_edge_length(); }

FalseGoalEpisode synthesize_false_goal_episode(const SpatialGraph& g, const AgentProfile& profile,
                                               double near_radius, int episode_id) {
  if (profile.preferences.size() != g.num_goals())
    throw ConfigError("profile preference length does not match the goal set");
  const NodeId true_goal = g.goals()[argmax_index(profile.preferences)];
  const NodeId false_goal = g.goals()[argmin_index(profile.preferences)];
  if (true_goal == false_goal)
    throw DataError("agent " + std::to_string(profile.agent_id) +
                    ": most and least preferred goals coincide");

  // Waypoints near the false goal, nearest first; the false goal itself last.
  std::vector<NodeId> waypoints;
  for (const auto& n : g.nodes())
    if (n.id != false_goal && n.id != true_goal && g.distance(n.id, false_goal) <= near_radius)
      waypoints.push_back(n.id);
  std::stable_sort(waypoints.begin(), waypoints.end(), [&](NodeId a, NodeId b) {
    return g.distance(a, false_goal) < g.distance(b, false_goal);
  });
  waypoints.push_back(false_goal);

  const std::vector<double> to_goal = distances_to(g, true_goal);
  std::vector<std::vector<double>> to_waypoint;
  for (NodeId w : waypoints) to_waypoint.push_back(distances_to(g, w));

  for (bool avoid_false_goal : {true, false}) {
    for (const auto& node : g.nodes()) {
      const NodeId origin = node.id;
      if (origin == true_goal || origin == false_goal) continue;
      if (g.distance(origin, false_goal) <= near_radius) continue;
      const double direct = to_goal[origin];
      if (!std::isfinite(direct)) continue;
      for (std::size_t wi = 0; wi < waypoints.size(); ++wi) {
        const NodeId w = waypoints[wi];
        if (w == origin) continue;
        const double detour = to_waypoint[wi][origin] + to_goal[w];
        if (!std::isfinite(detour) || detour > 1.5 * direct * (1.0 + 1e-12)) continue;
        PathResult first = shortest_path(g, origin, w);
        PathResult second = shortest_path(g, w, true_goal);
        std::vector<NodeId> path = first.nodes;
        path.insert(path.end(), second.nodes.begin() + 1, second.nodes.end());
        std::vector<NodeId> sorted = path;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) continue;
        if (avoid_false_goal && std::find(path.begin(), path.end(), false_goal) != path.end()) continue;

        FalseGoalEpisode out;
        out.false_goal = false_goal;
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < path.size(); ++t) {
          const double d = g.distance(path[t], false_goal);
          if (d < best) {
            best = d;
            out.pass_index = t;
          }
        }
        Episode& e = out.episode;
        e.agent_id = profile.agent_id;
        e.episode_id = episode_id;
        e.origin = origin;
        e.goal = true_goal;
        e.path = std::move(path);
        e.timestamps.resize(e.path.size());
        for (std::size_t t = 0; t < e.path.size(); ++t) e.timestamps[t] = static_cast<int>(t) + 1;
        return out;
      }
    }
  }
  throw DataError("false-goal synthesis failed for agent " + std::to_string(profile.agent_id) +
                  ": no origin passes within " + std::to_string(near_radius) + " m of node " +
                  std::to_string(false_goal));
}

std::size_t prefix_length(std::size_t total, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("observation fraction must lie in (0, 1]");
  // The small offset keeps products like 0.7 * 10 from rounding up to 8.
  const auto steps = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(total) - 1e-9));
  return std::clamp<std::size_t>(steps, 1, total);
}

Episode truncate(const Episode& e, double fraction) {
  const std::size_t steps = prefix_length(e.path.size(), fraction);
  Episode out = e;
  out.path.resize(steps);
  out.timestamps.resize(steps);
  out.goal_hidden = true;
  return out;
}

// ---------------------------------------------------------------------------
// IO

nlohmann::json profile_to_json(const AgentProfile& p) {
  return {{"agent_id", p.agent_id},
          {"preferences", p.preferences},
          {"rationality_temperature", p.rationality_temperature}};
}

AgentProfile profile_from_json(const nlohmann::json& j) {
  AgentProfile p;
  p.agent_id = j.at("agent_id").get<int>();
  p.preferences = j.at("preferences").get<std::vector<double>>();
  p.rationality_temperature = j.at("rationality_temperature").get<double>();
  return p;
}

nlohmann::ordered_json episode_to_json(const Episode& e, Split split) {
  nlohmann::ordered_json j;
  j["agent"] = e.agent_id;
  j["episode"] = e.episode_id;
  j["origin"] = e.origin;
  j["goal"] = e.goal;
  j["path"] = e.path;
  j["ts"] = e.timestamps;
  j["split"] = split == Split::kTrain ? "train" : "test";
  return j;
}

nlohmann::json dataset_header_json(const Dataset& d) {
  nlohmann::json h;
  h["format_version"] = 1;
  h["graph_hash"] = d.graph_hash;
  h["master_seed"] = d.master_seed;
  h["params"] = {{"num_agents", d.params.num_agents},
                 {"episodes_per_agent", d.params.episodes_per_agent},
                 {"dirichlet_alpha", d.params.dirichlet_alpha},
                 {"temperature", d.params.temperature},
                 {"k_paths", d.params.k_paths}};
  h["episode_count"] = d.episodes.size();
  auto& profiles = h["profiles"] = nlohmann::json::array();
  for (const auto& p : d.profiles) profiles.push_back(profile_to_json(p));
  return h;
}

void save_dataset(const Dataset& d, const std::filesystem::path& jsonl,
                  const std::filesystem::path& header) {
  std::ofstream out(jsonl);
  if (!out) throw DataError("cannot write dataset file " + jsonl.string());
  for (std::size_t i = 0; i < d.episodes.size(); ++i)
    out << episode_to_json(d.episodes[i], d.split[i]).dump() << '\n';
  std::ofstream hout(header);
  if (!hout) throw DataError("cannot write dataset header " + header.string());
  hout << dataset_header_json(d).dump(2) << '\n';
}

Dataset load_dataset(const std::filesystem::path& jsonl, const std::filesystem::path& header) {
  Dataset d;
  {
    std::ifstream in(header);
    if (!in) throw DataError("cannot open dataset header " + header.string());
    try {
      const auto h = nlohmann::json::parse(in);
      d.graph_hash = h.at("graph_hash").get<std::string>();
      d.master_seed = h.at("master_seed").get<std::uint64_t>();
      const auto& p = h.at("params");
      d.params.num_agents = p.at("num_agents").get<int>();
      d.params.episodes_per_agent = p.at("episodes_per_agent").get<int>();
      d.params.dirichlet_alpha = p.at("dirichlet_alpha").get<double>();
      d.params.temperature = p.at("temperature").get<double>();
      d.params.k_paths = p.at("k_paths").get<int>();
      for (const auto& jp : h.at("profiles")) d.profiles.push_back(profile_from_json(jp));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(header.string() + ": " + e.what());
    }
  }
  std::ifstream in(jsonl);
  if (!in) throw DataError("cannot open dataset file " + jsonl.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Episode e;
      e.agent_id = j.at("agent").get<int>();
      e.episode_id = j.at("episode").get<int>();
      e.origin = j.at("origin").get<NodeId>();
      e.goal = j.at("goal").get<NodeId>();
      e.path = j.at("path").get<std::vector<NodeId>>();
      e.timestamps = j.at("ts").get<std::vector<int>>();
      const auto split = j.at("split").get<std::string>();
      if (split != "train" && split != "test") throw DataError("bad split \"" + split + "\"");
      d.episodes.push_back(std::move(e));
      d.split.push_back(split == "train" ? Split::kTrain : Split::kTest);
    } catch (const std::exception& e) {
      throw DataError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

}  // namespace hivae
