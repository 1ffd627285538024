#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "eval_oracles.hpp"
#include "hivae/error.hpp"
#include "hivae/eval.hpp"
#include "test_support.hpp"

using namespace hivae;
using hivae::testing::AgentOracleStub;
using hivae::testing::UniformStub;

namespace {

// Agent 0 always walks to goal 0, agent 1 to goal 8.
Dataset fixed_goal_dataset(const SpatialGraph& g, std::uint64_t seed) {
  const std::vector<AgentProfile> profiles{{0, {1.0, 0.0}, 0.2}, {1, {0.0, 1.0}, 0.2}};
  return generate_dataset(g, profiles, 20, 2, seed, 1);
}

FalseGoalEpisode line_false_goal(int length, std::size_t pass_index, int agent) {
  FalseGoalEpisode fg;
  fg.episode.agent_id = agent;
  for (int i = 0; i < length; ++i) {
    fg.episode.path.push_back(i);
    fg.episode.timestamps.push_back(i + 1);
  }
  fg.episode.origin = 0;
  fg.episode.goal = length - 1;
  fg.false_goal = static_cast<NodeId>(pass_index);
  fg.pass_index = pass_index;
  return fg;
}

}  // namespace

TEST(Brier, ClosedForms) {
  EXPECT_EQ(brier({{0.0, 1.0, 0.0}}, 1), 0.0);
  EXPECT_DOUBLE_EQ(brier({{0.25, 0.25, 0.25, 0.25}}, 2), 0.75);
  EXPECT_DOUBLE_EQ(brier({{1.0, 0.0, 0.0}}, 2), 2.0);
  EXPECT_THROW(brier({{1.0}}, 1), std::out_of_range);
  for (std::size_t n : {2u, 4u, 100u, 3185u}) {
    const GoalPosterior u{std::vector<double>(n, 1.0 / static_cast<double>(n))};
    EXPECT_EQ(brier(u, n / 2), 1.0 - 1.0 / static_cast<double>(n)) << n;
  }
}

TEST(BrierCurve, UniformAndOracleStubs) {
  const SpatialGraph g = hivae::testing::grid3({0, 8});
  const Dataset d = fixed_goal_dataset(g, 2);
  const auto test = d.select(Split::kTest);
  UniformStub uniform(g);
  const BrierCurve u = evaluate_brier_curve(uniform, test, kEvalFractions, 3);
  ASSERT_EQ(u.means.size(), 4u);
  for (double m : u.means) EXPECT_NEAR(m, 0.5, 1e-12);
  EXPECT_EQ(u.per_episode[0].size(), test.size());

  AgentOracleStub oracle(g, {{0, 0}, {1, 1}});
  for (double m : evaluate_brier_curve(oracle, test).means) EXPECT_EQ(m, 0.0);
  EXPECT_THROW(evaluate_brier_curve(uniform, {}), DataError);
}

TEST(BrierCurve, HundredGoalUniformIsFlat) {
  const SpatialGraph g = generate_synthetic_graph({.grid_width = 10, .grid_height = 10, .seed = 4});
  ASSERT_EQ(g.num_goals(), 100u);
  const auto profiles = sample_agent_profiles(g, 2, 0.5, 1);
  const auto test = generate_dataset(g, profiles, 10, 2, 3).select(Split::kTest);
  UniformStub uniform(g);
  for (double m : evaluate_brier_curve(uniform, test).means) EXPECT_NEAR(m, 0.99, 1e-12);
}

TEST(BrierCurve, ThreadCountInvariant) {
  const SpatialGraph g = hivae::testing::grid3({0, 4, 8});
  const auto profiles = sample_agent_profiles(g, 3, 0.5, 5);
  const auto test = generate_dataset(g, profiles, 20, 3, 6).select(Split::kTest);
  // Posterior depends on the prefix so per-episode ordering matters.
  class LastNodeStub : public GoalInferenceModel {
   public:
    explicit LastNodeStub(const SpatialGraph& g) : g_(g) {}
    std::string kind() const override { return "last"; }
    const SpatialGraph& graph() const override { return g_; }
    GoalPosterior infer(std::span<const NodeId> p, int) const override {
      std::vector<double> w(g_.num_goals());
      for (std::size_t k = 0; k < w.size(); ++k) w[k] = 1.0 / (1.0 + g_.distance(p.back(), g_.goals()[k]));
      const double s = hivae::testing::sum(w);
      for (double& x : w) x /= s;
      return {w};
    }

   private:
    const SpatialGraph& g_;
  } model(g);
  const auto a = evaluate_brier_curve(model, test, kEvalFractions, 1);
  const auto b = evaluate_brier_curve(model, test, kEvalFractions, 4);
  EXPECT_EQ(a.per_episode, b.per_episode);
  EXPECT_EQ(a.means, b.means);
}

TEST(FalseGoal, CheckpointGrid) {
  EXPECT_EQ(false_goal_checkpoints(9, 10), (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}));
  EXPECT_EQ(false_goal_checkpoints(18, 10).back(), 19u);
  EXPECT_EQ(false_goal_checkpoints(18, 10).front(), 1u);
  const auto dup = false_goal_checkpoints(2, 10);
  EXPECT_EQ(dup.size(), 10u);
  EXPECT_EQ(dup.back(), 3u);
  EXPECT_TRUE(std::is_sorted(dup.begin(), dup.end()));
  EXPECT_THROW(false_goal_checkpoints(3, 0), std::invalid_argument);
}

TEST(FalseGoal, UniformStubIsFlat) {
  const SpatialGraph g = hivae::testing::line_graph(20, {5, 12, 19});
  UniformStub uniform(g);
  const auto curve = false_goal_curve(uniform, {line_false_goal(20, 12, 0), line_false_goal(20, 5, 1)});
  ASSERT_EQ(curve.means.size(), 10u);
  for (double m : curve.means) EXPECT_NEAR(m, 1.0 / 3.0, 1e-15);
  EXPECT_EQ(curve.warnings.size(), 1u);  // pass index 5 < 10 intervals
}

TEST(FalseGoal, OracleStubIsZero) {
  const SpatialGraph g = hivae::testing::line_graph(20, {12, 19});
  AgentOracleStub oracle(g, {{0, 1}});
  const auto curve = false_goal_curve(oracle, {line_false_goal(20, 12, 0)}, 10, 2);
  for (double m : curve.means) EXPECT_EQ(m, 0.0);
  EXPECT_TRUE(curve.warnings.empty());
}

TEST(FalseGoal, DuplicateCheckpointsRepeatValues) {
  const SpatialGraph g = hivae::testing::line_graph(6, {2, 5});
  // Mass on goal 0 grows with prefix length so repeated entries are visible.
  class GrowingStub : public GoalInferenceModel {
   public:
    explicit GrowingStub(const SpatialGraph& g) : g_(g) {}
    std::string kind() const override { return "growing"; }
    const SpatialGraph& graph() const override { return g_; }
    GoalPosterior infer(std::span<const NodeId> p, int) const override {
      const double a = 0.1 * static_cast<double>(p.size());
      return {{a, 1.0 - a}};
    }

   private:
    const SpatialGraph& g_;
  } model(g);
  const auto curve = false_goal_curve(model, {line_false_goal(6, 2, 0)});
  ASSERT_EQ(curve.warnings.size(), 1u);
  const auto lengths = false_goal_checkpoints(2, 10);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(curve.per_episode[0][k], 0.1 * lengths[k], 1e-15);
  auto bad = line_false_goal(6, 2, 0);
  bad.pass_index = 6;
  EXPECT_THROW(false_goal_curve(model, {bad}), DataError);
}

TEST(Drift, IdenticalDatasetsGiveZeroDelta) {
  const SpatialGraph g = hivae::testing::grid3({0, 8});
  const Dataset d = fixed_goal_dataset(g, 2);
  UniformStub uniform(g);
  const auto r = drift_evaluation(uniform, d, d);
  for (double x : r.deltas) EXPECT_EQ(x, 0.0);
  Dataset other = d;
  other.graph_hash = "elsewhere";
  EXPECT_THROW(drift_evaluation(uniform, d, other), DataError);
}

TEST(Drift, AgentFixedModelSeesPreferenceChange) {
  const SpatialGraph g = hivae::testing::grid3({0, 8});
  const Dataset original = fixed_goal_dataset(g, 2);
  const std::vector<AgentProfile> swapped{{0, {0.0, 1.0}, 0.2}, {1, {1.0, 0.0}, 0.2}};
  const Dataset drifted = generate_dataset(g, swapped, 20, 2, 2, 1);
  AgentOracleStub oracle(g, {{0, 0}, {1, 1}});
  const auto r = drift_evaluation(oracle, original, drifted);
  for (double x : r.deltas) EXPECT_DOUBLE_EQ(x, 2.0);  // all mass on the wrong goal
}

TEST(Wilcoxon, AllNegativeTenPairs) {
  std::vector<double> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(0.1 * i);
    b.push_back(0.1 * i + 0.01 * (i + 1));
  }
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_EQ(r.w, 0.0);
  EXPECT_EQ(r.w_minus, 55.0);
  EXPECT_TRUE(r.exact);
  EXPECT_NEAR(r.p_value, 2.0 / 1024.0, 1e-15);
  EXPECT_LT(r.p_value, 0.01);
  EXPECT_NEAR(r.z, -2.80, 0.01);
}

TEST(Wilcoxon, MatchesSignEnumeration) {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + rng.index(8);
    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse values force ties and occasional zero differences.
      xs[i] = static_cast<double>(rng.index(6));
      ys[i] = static_cast<double>(rng.index(6));
    }
    if (xs == ys) continue;
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < n; ++i) nonzero += xs[i] != ys[i];
    const auto oracle = hivae::testing::signed_rank_by_enumeration(xs, ys);
    const auto r = wilcoxon_signed_rank(xs, ys);
    EXPECT_EQ(r.n, static_cast<int>(nonzero));
    EXPECT_DOUBLE_EQ(r.w, oracle.w);
    EXPECT_NEAR(r.p_value, oracle.p, 1e-12) << "trial " << trial;
  }
}

TEST(Wilcoxon, DegenerateSamples) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_THROW(wilcoxon_signed_rank(x, x), std::invalid_argument);
  EXPECT_THROW(wilcoxon_signed_rank({1, 2, 3}, {0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(wilcoxon_signed_rank(x, {1, 2}), std::invalid_argument);
}

TEST(Wilcoxon, LargeSampleUsesNormalApproximation) {
  std::vector<double> a(30), b(30);
  for (int i = 0; i < 30; ++i) {
    a[i] = i;
    b[i] = i + (i % 3 == 0 ? -1.0 : 1.0) * (1 + i);
  }
  const auto r = wilcoxon_signed_rank(a, b);
  EXPECT_FALSE(r.exact);
  EXPECT_NEAR(r.p_value, std::erfc(std::abs(r.z) / std::sqrt(2.0)), 1e-15);
}

TEST(Report, JsonRoundTripAndCsv) {
  EvalReport r;
  r.models = {"hivae", "btom"};
  r.fractions = {0.25, 0.95};
  r.brier = {{"hivae", {0.5, 0.25}}, {"btom", {0.75, 0.125}}};
  r.false_goal = {{"btom", {0.1, 0.2, 0.3}}};
  r.drift = {{"hivae", {0.0, -0.5}}};
  r.wilcoxon = WilcoxonReport{"hivae", "btom", {0.0, 0.0, 55.0, -2.8, 0.002, true, 10}};
  r.metadata = {{"seed", 7}};
  const EvalReport back = report_from_json(report_to_json(r));
  EXPECT_TRUE(back == r);
  EXPECT_EQ(brier_csv(r), "model,f25,f95\nhivae,0.5,0.25\nbtom,0.75,0.125\n");
  EXPECT_EQ(false_goal_csv(r), "model,i1,i2,i3\nbtom,0.1,0.2,0.3\n");
  EXPECT_EQ(drift_csv(r), "model,f25,f95\nhivae,0.0,-0.5\n");
  EXPECT_THROW(report_from_json(nlohmann::json::array()), DataError);

  const auto dir = std::filesystem::temp_directory_path() / "hivae_report_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  emit_report(r, dir);
  for (const char* f : {"report.json", "brier.csv", "false_goal.csv", "drift.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  std::ifstream in(dir / "report.json");
  EXPECT_TRUE(report_from_json(nlohmann::json::parse(in)) == r);
  std::filesystem::remove_all(dir);
}
