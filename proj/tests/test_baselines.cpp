#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "hivae/baselines.hpp"
#include "hivae/error.hpp"
#include "hivae/sim.hpp"
#include "test_support.hpp"

using namespace hivae;
using ad::Tensor;
using hivae::testing::line_graph;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// All-pairs distances by Floyd-Warshall.
std::vector<std::vector<double>> floyd(const SpatialGraph& g) {
  const std::size_t n = g.num_nodes();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, kInf));
  for (std::size_t i = 0; i < n; ++i) d[i][i] = 0.0;
  for (const auto& e : g.edges()) d[e.src][e.dst] = std::min(d[e.src][e.dst], e.length);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) d[i][j] = std::min(d[i][j], d[i][k] + d[k][j]);
  return d;
}

// Step-by-step product of Boltzmann likelihoods with an explicit prior.
std::vector<double> btom_oracle(const SpatialGraph& g, const std::vector<NodeId>& path, double beta,
                                const std::vector<double>& prior) {
  const auto d = floyd(g);
  std::vector<double> w(g.num_goals());
  for (std::size_t k = 0; k < g.num_goals(); ++k) {
    const NodeId goal = g.goals()[k];
    double like = prior[k];
    for (std::size_t s = 0; s + 1 < path.size(); ++s)
      like *= std::exp(-beta * (d[path[s + 1]][goal] - d[path[s]][goal] + *g.edge_length(path[s], path[s + 1])));
    w[k] = like;
  }
  const double z = hivae::testing::sum(w);
  for (double& x : w) x /= z;
  return w;
}

std::vector<Episode> one_goal_episodes(const SpatialGraph& g, int agent, NodeId goal, int count, int first_id = 0) {
  std::vector<Episode> out;
  for (int i = 0; i < count; ++i) {
    Episode e;
    e.agent_id = agent;
    e.episode_id = first_id + i;
    e.origin = (goal + 1 + i) % static_cast<NodeId>(g.num_nodes());
    if (e.origin == goal) e.origin = (e.origin + 1) % static_cast<NodeId>(g.num_nodes());
    e.goal = goal;
    e.path = shortest_path(g, e.origin, goal).nodes;
    for (std::size_t t = 0; t < e.path.size(); ++t) e.timestamps.push_back(static_cast<int>(t) + 1);
    out.push_back(e);
  }
  return out;
}

BaselineConfig tiny_baseline() {
  BaselineConfig c;
  c.d_model = 8;
  c.hidden = 12;
  c.heads = 2;
  c.d_ff = 16;
  c.blocks = 1;
  c.past_episodes = 3;
  c.lr = 5e-3;
  c.epochs = 30;
  c.batch_size = 16;
  c.seed = 3;
  return c;
}

// Two agents with opposite single-goal preferences on the 3x3 grid.
struct TwoGoalWorld {
  std::shared_ptr<const SpatialGraph> graph = std::make_shared<const SpatialGraph>(hivae::testing::grid3({0, 8}));
  Dataset data;
  TwoGoalWorld() {
    std::vector<AgentProfile> profiles{{0, {1.0, 0.0}, 0.2}, {1, {0.0, 1.0}, 0.2}};
    data = generate_dataset(*graph, profiles, 40, 2, 21, 1);
  }
};

}  // namespace

TEST(Btom, OriginOnlyIsUniform) {
  const SpatialGraph g = hivae::testing::grid3({0, 4, 8});
  const CostTable costs = build_cost_table(g);
  const auto p = btom_posterior(g, costs, std::vector<NodeId>{3}, 1.0).probs;
  for (double x : p) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Btom, LineGraphHandExample) {
  const SpatialGraph g = line_graph(3, {0, 2});
  const auto p = btom_posterior(g, build_cost_table(g), std::vector<NodeId>{0, 1}, 2.0).probs;
  const double z = std::exp(-4.0) + 1.0;
  EXPECT_NEAR(p[0], std::exp(-4.0) / z, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / z, 1e-15);
}

TEST(Btom, ZeroBetaReturnsPrior) {
  const SpatialGraph g = hivae::testing::grid3({0, 2, 8});
  const std::vector<double> prior{0.2, 0.5, 0.3};
  const auto p = btom_posterior(g, build_cost_table(g), std::vector<NodeId>{3, 4, 5}, 0.0, prior).probs;
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p[k], prior[k], 1e-15);
}

TEST(Btom, UnreachableGoalGetsZero) {
  // 0 <-> 1 <-> 2, plus a sink 3 reached only from 2; goal 0 is unreachable from 3.
  const SpatialGraph g({{0, 0, 0}, {1, 1, 0}, {2, 2, 0}, {3, 3, 0}},
                       {{0, 1, 1.0}, {1, 0, 1.0}, {1, 2, 1.0}, {2, 1, 1.0}, {2, 3, 1.0}}, {0, 3});
  const auto p = btom_posterior(g, build_cost_table(g), std::vector<NodeId>{2, 3}, 1.0).probs;
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 1.0);
}

TEST(Btom, MatchesStepProductOracle) {
  const SpatialGraph g = generate_synthetic_graph({.grid_width = 4, .grid_height = 4, .num_goals = 5, .seed = 8});
  const CostTable costs = build_cost_table(g, 3);
  RngStream rng(12);
  const auto profiles = sample_agent_profiles(g, 2, 0.5, 3);
  for (int i = 0; i < 20; ++i) {
    const Episode e = generate_episode(g, profiles[i % 2], i, 3, rng);
    std::vector<double> prior(g.num_goals());
    for (double& x : prior) x = rng.uniform(0.1, 1.0);
    const double s = hivae::testing::sum(prior);
    for (double& x : prior) x /= s;
    const Episode prefix = truncate(e, 0.6);
    const auto expected = btom_oracle(g, prefix.path, 0.3, prior);
    const auto got = btom_posterior(g, costs, prefix.path, 0.3, prior).probs;
    for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(got[k], expected[k], 1e-12);
  }
}

TEST(Btom, ScaleInvariance) {
  const SpatialGraph g = generate_synthetic_graph({.grid_width = 4, .grid_height = 3, .num_goals = 4, .seed = 9});
  std::vector<NodeRecord> nodes = g.nodes();
  std::vector<EdgeRecord> edges = g.edges();
  for (auto& n : nodes) n.x *= 7.0, n.y *= 7.0;
  for (auto& e : edges) e.length *= 7.0;
  const SpatialGraph big(nodes, edges, g.goals());
  const std::vector<NodeId> prefix = shortest_path(g, 0, 11).nodes;
  const auto a = btom_posterior(g, build_cost_table(g), prefix, 0.8).probs;
  const auto b = btom_posterior(big, build_cost_table(big), prefix, 0.8 / 7.0).probs;
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-12);

  // The mean-edge unit makes the model itself scale-free.
  BtomModel ma(std::make_shared<const SpatialGraph>(g), {});
  BtomModel mb(std::make_shared<const SpatialGraph>(big), {});
  ma.prepare();
  mb.prepare();
  const auto pa = ma.infer(prefix, 0).probs, pb = mb.infer(prefix, 0).probs;
  for (std::size_t k = 0; k < pa.size(); ++k) EXPECT_NEAR(pa[k], pb[k], 1e-12);
}

TEST(Btom, ModelRequiresPrepare) {
  BtomModel m(std::make_shared<const SpatialGraph>(line_graph(3, {0, 2})), {});
  EXPECT_THROW(m.infer(std::vector<NodeId>{1}, 0), std::logic_error);
  m.prepare();
  EXPECT_NEAR(hivae::testing::sum(m.infer(std::vector<NodeId>{1, 2}, 0).probs), 1.0, 1e-12);
}

TEST(ExtendedBtom, PriorDominatesAtOrigin) {
  const auto g = std::make_shared<const SpatialGraph>(hivae::testing::grid3({0, 4, 8}));
  BtomModel m(g, {}, true);
  auto train = one_goal_episodes(*g, 0, 8, 6);
  const auto other = one_goal_episodes(*g, 1, 0, 2, 100);
  train.insert(train.end(), other.begin(), other.end());
  m.fit(train);
  m.prepare();
  EXPECT_EQ(argmax_index(m.infer(std::vector<NodeId>{3}, 0).probs), 2u);

  const auto& pri = m.priors();
  const auto& a0 = pri.for_agent(0);
  EXPECT_DOUBLE_EQ(a0[0], 1.0 / (6 + 3));
  EXPECT_DOUBLE_EQ(a0[2], 7.0 / (6 + 3));
  EXPECT_NEAR(hivae::testing::sum(a0), 1.0, 1e-15);
  EXPECT_NEAR(hivae::testing::sum(pri.population), 1.0, 1e-15);
  EXPECT_EQ(&pri.for_agent(42), &pri.population);
  EXPECT_EQ(pri.population[0], 3.0 / (8 + 3));
}

TEST(ExtendedBtom, UniformPriorsMatchBaseExactly) {
  const auto g = std::make_shared<const SpatialGraph>(hivae::testing::grid3({0, 2, 6, 8}));
  BtomModel base(g, {});
  BtomModel ext(g, {}, true);
  // One episode per goal gives identical smoothed counts.
  std::vector<Episode> train;
  for (NodeId goal : g->goals()) {
    auto e = one_goal_episodes(*g, 0, goal, 1, static_cast<int>(train.size()));
    train.insert(train.end(), e.begin(), e.end());
  }
  ext.fit(train);
  base.prepare();
  ext.prepare();
  for (const std::vector<NodeId>& prefix : {std::vector<NodeId>{4}, {3, 4, 5}, {1, 4, 7}, {0, 1}})
    EXPECT_EQ(base.infer(prefix, 0).probs, ext.infer(prefix, 0).probs);
}

TEST(ExtendedBtom, JsonRoundTrip) {
  const auto g = std::make_shared<const SpatialGraph>(hivae::testing::grid3({0, 8}));
  BtomModel m(g, {.beta = 1.7, .unit = LengthUnit::kRaw}, true);
  m.fit(one_goal_episodes(*g, 3, 8, 4));
  BtomModel back(g, {}, true);
  back.load_json(m.to_json());
  EXPECT_EQ(back.to_json(), m.to_json());
  EXPECT_EQ(back.config().beta, 1.7);
  BtomModel wrong(std::make_shared<const SpatialGraph>(line_graph(3, {0, 2})), {}, true);
  EXPECT_THROW(wrong.load_json(m.to_json()), DataError);
}

TEST(RecurrentCells, GruMatchesHandOracle) {
  RngStream rng(1);
  const std::size_t d = 3, h = 2;
  RecurrentParams p{hivae::testing::random_tensor({d, 3 * h}, rng), hivae::testing::random_tensor({h, 3 * h}, rng),
                    hivae::testing::random_tensor({1, 3 * h}, rng), hivae::testing::random_tensor({1, 3 * h}, rng)};
  const Tensor x = hivae::testing::random_tensor({1, d}, rng), s = hivae::testing::random_tensor({1, h}, rng);
  auto pre = [&](const Tensor& w, const Tensor& b, const Tensor& in, std::size_t gate, std::size_t j) {
    double v = b[gate * h + j];
    for (std::size_t k = 0; k < in.size(); ++k) v += in[k] * w.at(k, gate * h + j);
    return v;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const Tensor out = gru_cell(x, s, p);
  for (std::size_t j = 0; j < h; ++j) {
    const double r = sig(pre(p.input, p.bias_x, x, 0, j) + pre(p.state, p.bias_h, s, 0, j));
    const double z = sig(pre(p.input, p.bias_x, x, 1, j) + pre(p.state, p.bias_h, s, 1, j));
    const double n = std::tanh(pre(p.input, p.bias_x, x, 2, j) + r * pre(p.state, p.bias_h, s, 2, j));
    EXPECT_NEAR(out[j], (1 - z) * n + z * s[j], 1e-14);
  }
}

TEST(RecurrentCells, LstmMatchesHandOracle) {
  RngStream rng(2);
  const std::size_t d = 2, h = 3;
  RecurrentParams p{hivae::testing::random_tensor({d, 4 * h}, rng), hivae::testing::random_tensor({h, 4 * h}, rng),
                    hivae::testing::random_tensor({1, 4 * h}, rng), hivae::testing::random_tensor({1, 4 * h}, rng)};
  const Tensor x = hivae::testing::random_tensor({1, d}, rng), s = hivae::testing::random_tensor({1, h}, rng);
  const Tensor c = hivae::testing::random_tensor({1, h}, rng);
  auto gate = [&](std::size_t gi, std::size_t j) {
    double v = p.bias_x[gi * h + j] + p.bias_h[gi * h + j];
    for (std::size_t k = 0; k < d; ++k) v += x[k] * p.input.at(k, gi * h + j);
    for (std::size_t k = 0; k < h; ++k) v += s[k] * p.state.at(k, gi * h + j);
    return v;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const auto [h2, c2] = lstm_cell(x, s, c, p);
  for (std::size_t j = 0; j < h; ++j) {
    const double i = sig(gate(0, j)), f = sig(gate(1, j)), g = std::tanh(gate(2, j)), o = sig(gate(3, j));
    const double cn = f * c[j] + i * g;
    EXPECT_NEAR(c2[j], cn, 1e-14);
    EXPECT_NEAR(h2[j], o * std::tanh(cn), 1e-14);
  }
}

TEST(RecurrentCells, GateGradientsMatchFiniteDifferences) {
  RngStream rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 3, h = 4;
    for (std::size_t gates : {3u, 4u}) {
      RecurrentParams p{hivae::testing::random_tensor({d, gates * h}, rng),
                        hivae::testing::random_tensor({h, gates * h}, rng),
                        hivae::testing::random_tensor({1, gates * h}, rng),
                        hivae::testing::random_tensor({1, gates * h}, rng)};
      Tensor x = hivae::testing::random_tensor({1, d}, rng), s = hivae::testing::random_tensor({1, h}, rng);
      Tensor c = hivae::testing::random_tensor({1, h}, rng);
      const Tensor w = hivae::testing::random_tensor({1, h}, rng, -1, 1, false);
      auto loss = [&] {
        if (gates == 3) return ad::sum(ad::mul(gru_cell(x, s, p), w));
        const auto [h2, c2] = lstm_cell(x, s, c, p);
        return ad::sum(ad::mul(ad::add(h2, c2), w));
      };
      EXPECT_LT(hivae::testing::max_grad_error(loss, {p.input, p.state, p.bias_x, p.bias_h, x, s, c}), 1e-6);
    }
  }
}

TEST(RnnModel, SeparableToyTask) {
  TwoGoalWorld world;
  for (CellKind cell : {CellKind::kGru, CellKind::kLstm}) {
    RnnModel m(world.graph, cell, tiny_baseline());
    train_model(m, m.training_samples(world.data.select(Split::kTrain)), m.train_config());
    int correct = 0, n = 0;
    for (const Episode& e : world.data.select(Split::kTest)) {
      const auto p = m.infer(e.path, e.agent_id).probs;
      EXPECT_NEAR(hivae::testing::sum(p), 1.0, 1e-12);
      correct += static_cast<int>(argmax_index(p)) == goal_index_of(*world.graph, e.goal);
      ++n;
    }
    EXPECT_GT(static_cast<double>(correct) / n, 0.9) << m.kind();
  }
}

TEST(TomNet, CharacterSetsAndExclusion) {
  TwoGoalWorld world;
  TomNetModel m(world.graph, tiny_baseline());
  const auto train = world.data.select(Split::kTrain);
  m.fit(train);
  ASSERT_EQ(m.character_sets().size(), 2u);
  EXPECT_EQ(m.character_sets().at(0).size(), 3u);
  const auto samples = m.training_samples(train);
  EXPECT_EQ(samples.size(), (train.size() - 6) * kTrainFractions.size());
  for (const auto& s : samples) EXPECT_GE(s.episode_id, 3);
}

TEST(TomNet, MissingAgentUsesZeroCharacter) {
  TwoGoalWorld world;
  TomNetModel m(world.graph, tiny_baseline());
  m.fit(world.data.select(Split::kTrain));
  m.prepare();
  const Tensor zero = m.character(99);
  for (double x : zero.data()) EXPECT_EQ(x, 0.0);
  const std::vector<NodeId> prefix{3, 4};
  EXPECT_EQ(m.infer(prefix, 99).probs, posterior_from_logits(m.logits(prefix, zero)).probs);
}

TEST(TomNet, CharacterSeparatesOppositeAgents) {
  TwoGoalWorld world;
  TomNetModel m(world.graph, tiny_baseline());
  const auto train = world.data.select(Split::kTrain);
  m.fit(train);
  train_model(m, m.training_samples(train), m.train_config());
  m.prepare();
  // Node 4 is the centre: equidistant from both goals.
  const std::vector<NodeId> prefix{4};
  const auto p0 = m.infer(prefix, 0).probs, p1 = m.infer(prefix, 1).probs;
  EXPECT_NEAR(hivae::testing::sum(p0), 1.0, 1e-12);
  EXPECT_GT(p0[0], p1[0] + 0.2);
}
