#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hivae/error.hpp"
#include "hivae/sim.hpp"
#include "test_support.hpp"

using namespace hivae;
using hivae::testing::line_graph;

namespace {

SpatialGraph small_grid(int goals = 6, std::uint64_t seed = 11) {
  return generate_synthetic_graph({.grid_width = 6, .grid_height = 5, .num_goals = goals, .seed = seed});
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Diamond: 0 -> {1, 2} -> 3, both routes length 2. Only node 3 is a goal,
// and node 0 is the only node whose out-edges reach 3 through a choice.
SpatialGraph diamond(double right_len) {
  return SpatialGraph({{0, 0, 0}, {1, 1, 1}, {2, 1, -1}, {3, 2, 0}},
                      {{0, 1, 1.0}, {1, 3, 1.0}, {0, 2, 1.0}, {2, 3, right_len}, {3, 0, 2.0}, {3, 1, 1.0},
                       {3, 2, right_len}, {1, 0, 1.0}, {2, 0, 1.0}},
                      {3});
}

}  // namespace

TEST(Profiles, OnSimplexAndDeterministic) {
  const SpatialGraph g = small_grid();
  const auto a = sample_agent_profiles(g, 8, 0.5, 42);
  const auto b = sample_agent_profiles(g, 8, 0.5, 42);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 8u);
  for (const auto& p : a) {
    ASSERT_EQ(p.preferences.size(), g.num_goals());
    EXPECT_NEAR(hivae::testing::sum(p.preferences), 1.0, 1e-9);
    for (double x : p.preferences) EXPECT_GE(x, 0.0);
  }
  EXPECT_NE(sample_agent_profiles(g, 8, 0.5, 43), a);
}

TEST(Profiles, LargeAlphaConcentratesNearUniform) {
  RngStream rng(5);
  for (int i = 0; i < 100; ++i) {
    for (double x : sample_dirichlet(4, 1e6, rng)) EXPECT_NEAR(x, 0.25, 0.02);
  }
}

TEST(Profiles, RejectsBadArguments) {
  const SpatialGraph g = small_grid();
  EXPECT_THROW(sample_agent_profiles(g, 0, 0.5, 1), ConfigError);
  EXPECT_THROW(sample_agent_profiles(g, 3, 0.0, 1), ConfigError);
}

TEST(Episodes, KOneIsTheShortestPath) {
  const SpatialGraph g = small_grid();
  const auto profiles = sample_agent_profiles(g, 1, 0.5, 3);
  RngStream rng(9);
  for (int i = 0; i < 30; ++i) {
    const Episode e = generate_episode(g, profiles[0], i, 1, rng);
    EXPECT_EQ(e.path, shortest_path(g, e.origin, e.goal).nodes);
    EXPECT_NE(e.origin, e.goal);
    ASSERT_EQ(e.timestamps.size(), e.path.size());
    for (std::size_t t = 0; t < e.timestamps.size(); ++t) EXPECT_EQ(e.timestamps[t], static_cast<int>(t) + 1);
    validate_episode(g, e);
  }
}

TEST(Episodes, EqualLengthCandidatesSplitEvenly) {
  const SpatialGraph g = diamond(1.0);
  AgentProfile p{0, {1.0}, 0.2};
  RngStream rng(17);
  int via_one = 0, from_zero = 0;
  while (from_zero < 1000) {
    const Episode e = generate_episode(g, p, 0, 2, rng);
    if (e.origin != 0) continue;
    ++from_zero;
    via_one += e.path[1] == 1;
  }
  EXPECT_NEAR(via_one / 1000.0, 0.5, 0.05);
}

TEST(Episodes, ColdTemperaturePicksShortest) {
  const SpatialGraph g = diamond(1.3);
  AgentProfile p{0, {1.0}, 1e-3};
  RngStream rng(18);
  int shortest = 0, from_zero = 0;
  while (from_zero < 1000) {
    const Episode e = generate_episode(g, p, 0, 2, rng);
    if (e.origin != 0) continue;
    ++from_zero;
    shortest += e.path == std::vector<NodeId>{0, 1, 3};
  }
  EXPECT_GT(shortest / 1000.0, 0.99);
}

TEST(Dataset, SplitSizesAndDeterminism) {
  const SpatialGraph g = small_grid();
  const auto profiles = sample_agent_profiles(g, 10, 0.5, 1);
  const Dataset a = generate_dataset(g, profiles, 100, 3, 77, 1);
  EXPECT_EQ(a.episodes.size(), 1000u);
  EXPECT_EQ(a.select(Split::kTrain).size(), 700u);
  EXPECT_EQ(a.select(Split::kTest).size(), 300u);
  EXPECT_EQ(test_count(100), 30);
  for (const Episode& e : a.select(Split::kTest)) EXPECT_GE(e.episode_id, 70);

  const Dataset b = generate_dataset(g, profiles, 100, 3, 77, 4);
  EXPECT_EQ(a, b);
  validate_dataset(g, a);

  const auto dir = std::filesystem::temp_directory_path() / "hivae_sim_test";
  std::filesystem::create_directories(dir);
  save_dataset(a, dir / "a.jsonl", dir / "a.header.json");
  save_dataset(b, dir / "b.jsonl", dir / "b.header.json");
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_EQ(slurp(dir / "a.header.json"), slurp(dir / "b.header.json"));
  EXPECT_EQ(load_dataset(dir / "a.jsonl", dir / "a.header.json"), a);
  std::filesystem::remove_all(dir);
}

TEST(Dataset, FullScaleShape) {
  // Size check only: a 100 x 1000 dataset on a small graph.
  const SpatialGraph g = generate_synthetic_graph({.grid_width = 4, .grid_height = 4, .num_goals = 5, .seed = 2});
  const auto profiles = sample_agent_profiles(g, 100, 0.5, 1);
  const Dataset d = generate_dataset(g, profiles, 1000, 1, 3, 1);
  EXPECT_EQ(d.episodes.size(), 100000u);
  EXPECT_EQ(d.select(Split::kTest).size(), 30000u);
}

TEST(Dataset, ValidationCatchesBrokenEpisodes) {
  const SpatialGraph g = line_graph(5, {4});
  Episode e{0, 0, {0, 1, 2, 3, 4}, {1, 2, 3, 4, 5}, 0, 4};
  validate_episode(g, e);
  Episode jump = e;
  jump.path = {0, 2, 3, 4};
  jump.timestamps = {1, 2, 3, 4};
  EXPECT_THROW(validate_episode(g, jump), DataError);
  Episode wrong_goal = e;
  wrong_goal.goal = 3;
  EXPECT_THROW(validate_episode(g, wrong_goal), DataError);
}

TEST(Truncate, CeilArithmetic) {
  EXPECT_EQ(prefix_length(8, 0.25), 2u);
  EXPECT_EQ(prefix_length(10, 0.95), 10u);
  EXPECT_EQ(prefix_length(10, 0.5), 5u);
  EXPECT_EQ(prefix_length(3, 0.01), 1u);
  EXPECT_EQ(prefix_length(7, 1.0), 7u);

  Episode e{1, 2, {0, 1, 2, 3, 4, 5, 6, 7}, {1, 2, 3, 4, 5, 6, 7, 8}, 0, 7};
  const Episode full = truncate(e, 1.0);
  EXPECT_EQ(full.path, e.path);
  EXPECT_TRUE(full.goal_hidden);
  const Episode quarter = truncate(e, 0.25);
  EXPECT_EQ(quarter.path, (std::vector<NodeId>{0, 1}));
  EXPECT_EQ(quarter.timestamps, (std::vector<int>{1, 2}));
  EXPECT_EQ(quarter.goal, 7);
  EXPECT_TRUE(quarter.goal_hidden);
}

TEST(Kl, ClosedForms) {
  const std::vector<double> p{0.97, 0.01, 0.01, 0.01};
  const std::vector<double> u(4, 0.25);
  const double expected = 0.97 * std::log(0.97 / 0.25) + 3 * 0.01 * std::log(0.01 / 0.25);
  EXPECT_NEAR(kl_divergence(p, u), expected, 1e-9);
  EXPECT_NEAR(kl_divergence(p, u), 1.22, 0.01);
  EXPECT_EQ(kl_divergence(u, u), 0.0);
  EXPECT_NEAR(kl_divergence({0.5, 0.5}, {1.0, 0.0}), 0.5 * std::log(0.5) + 0.5 * std::log(0.5 / 1e-12), 1e-6);
  EXPECT_THROW(kl_divergence(p, {0.5, 0.5}), std::invalid_argument);
}

TEST(Drift, EveryProfileClearsThreshold) {
  const SpatialGraph g = small_grid(20);
  const auto profiles = sample_agent_profiles(g, 10, 0.5, 4);
  const DriftResult r = generate_drifted_profiles(profiles, 1.0, 0.5, 99);
  ASSERT_EQ(r.profiles.size(), profiles.size());
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    EXPECT_GT(kl_divergence(profiles[i].preferences, r.profiles[i].preferences), 1.0);
    EXPECT_EQ(r.profiles[i].agent_id, profiles[i].agent_id);
    EXPECT_GE(r.attempts[i], 1);
  }
  EXPECT_EQ(generate_drifted_profiles(profiles, 1.0, 0.5, 99).profiles, r.profiles);
}

TEST(Drift, ZeroThresholdAcceptsFirstDraw) {
  const SpatialGraph g = small_grid(20);
  const auto profiles = sample_agent_profiles(g, 5, 0.5, 4);
  const DriftResult r = generate_drifted_profiles(profiles, 0.0, 0.5, 7);
  for (int a : r.attempts) EXPECT_EQ(a, 1);
}

TEST(Drift, UnreachableThresholdFails) {
  AgentProfile p{0, {0.5, 0.5}, 0.2};
  // Redraws at alpha = 1e6 are nearly uniform, so KL stays far below 1e3.
  EXPECT_THROW(generate_drifted_profiles({p}, 1e3, 1e6, 1, 50), DataError);
}

TEST(FalseGoal, LineGraphHandExample) {
  const SpatialGraph g = line_graph(5, {2, 4});
  AgentProfile p{0, {0.1, 0.9}, 0.2};
  const FalseGoalEpisode f = synthesize_false_goal_episode(g, p, 0.5);
  EXPECT_EQ(f.episode.path, (std::vector<NodeId>{0, 1, 2, 3, 4}));
  EXPECT_EQ(f.pass_index, 2u);
  EXPECT_EQ(f.false_goal, 2);
  EXPECT_EQ(f.episode.goal, 4);
}

TEST(FalseGoal, PassesWithinRadiusOnGrid) {
  const SpatialGraph g = small_grid(8);
  const auto profiles = sample_agent_profiles(g, 6, 0.5, 21);
  const double radius = default_near_radius(g);
  int built = 0;
  for (const auto& p : profiles) {
    FalseGoalEpisode f;
    try {
      f = synthesize_false_goal_episode(g, p, radius);
    } catch (const DataError&) {
      continue;  // some preference draws have no qualifying detour on a small grid
    }
    ++built;
    EXPECT_EQ(f.episode.goal, g.goals()[argmax_index(p.preferences)]);
    EXPECT_EQ(f.false_goal, g.goals()[argmin_index(p.preferences)]);
    double closest = 1e300;
    for (NodeId v : f.episode.path) closest = std::min(closest, g.distance(v, f.false_goal));
    EXPECT_LE(closest, radius);
    EXPECT_NEAR(g.distance(f.episode.path[f.pass_index], f.false_goal), closest, 1e-12);
    validate_episode(g, f.episode);
  }
  EXPECT_GE(built, 3);
}

TEST(FalseGoal, ImpossibleRadiusFails) {
  // Goal 0 is the argmax: nothing lies "en route" to 0 within 0.1 of goal 4 except 4 itself,
  // which can only be the final node if the target were 4.
  const SpatialGraph g({{0, 0, 0}, {1, 1, 0}, {2, 10, 0}}, {{0, 1, 1.0}, {1, 0, 1.0}, {2, 0, 10.0}, {0, 2, 10.0}},
                       {0, 2});
  AgentProfile p{0, {0.9, 0.1}, 0.2};
  EXPECT_THROW(synthesize_false_goal_episode(g, p, 0.1), DataError);
}

TEST(ArgExtrema, TiesByLowestIndex) {
  EXPECT_EQ(argmax_index({0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmin_index({0.3, 0.1, 0.1}), 1u);
}
