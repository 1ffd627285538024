#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "hivae/error.hpp"
#include "hivae/nn.hpp"
#include "test_support.hpp"

using namespace hivae;
using ad::Tensor;

namespace {

// Row-wise layer norm with the same epsilon as the library default.
std::vector<double> layer_norm_rows(std::vector<double> x, std::size_t d) {
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x[r * d + c] / d;
    for (std::size_t c = 0; c < d; ++c) var += (x[r * d + c] - mean) * (x[r * d + c] - mean) / d;
    for (std::size_t c = 0; c < d; ++c) x[r * d + c] = (x[r * d + c] - mean) / std::sqrt(var + 1e-5);
  }
  return x;
}

void zero_all(ParameterStore& store, const std::string& except_suffix) {
  for (auto& [name, t] : store.items()) {
    if (name.size() >= except_suffix.size() &&
        name.compare(name.size() - except_suffix.size(), except_suffix.size(), except_suffix) == 0)
      continue;
    Tensor copy = t;
    std::fill(copy.mutable_data().begin(), copy.mutable_data().end(), 0.0);
  }
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Random directed graph with reciprocal edges so every node has an in-neighbour.
SpatialGraph random_graph(RngStream& rng, int n) {
  std::vector<NodeRecord> nodes;
  std::vector<EdgeRecord> edges;
  for (int i = 0; i < n; ++i) nodes.push_back({i, double(i), 0.0});
  for (int i = 0; i + 1 < n; ++i) edges.push_back({i, i + 1, 1.0}), edges.push_back({i + 1, i, 1.0});
  for (int u = 0; u < n; ++u)
    for (int v = u + 2; v < n; ++v)
      if (rng.uniform() < 0.4) edges.push_back({u, v, 2.0});
  return SpatialGraph(nodes, edges, {0});
}

// Direct double-loop GAT oracle over the attention index.
std::vector<double> gat_oracle(const nn::AttentionIndex& index, const std::vector<double>& h, std::size_t d_in,
                               const nn::GatLayer& layer) {
  const std::size_t d = layer.weight.dim(1), n = index.num_nodes;
  std::vector<double> wh(n * d, 0.0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t o = 0; o < d; ++o)
      for (std::size_t k = 0; k < d_in; ++k) wh[v * d + o] += h[v * d_in + k] * layer.weight.at(k, o);
  const auto& a = layer.attention.data();
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<std::size_t, double>> scores;
    for (std::size_t e = 0; e < index.centers.size(); ++e) {
      if (static_cast<std::size_t>(index.centers[e]) != i) continue;
      const std::size_t j = index.neighbors[e];
      double s = 0.0;
      for (std::size_t o = 0; o < d; ++o) s += a[o] * wh[i * d + o] + a[d + o] * wh[j * d + o];
      scores.push_back({j, s > 0 ? s : layer.leaky_slope * s});
    }
    double z = 0.0;
    for (auto& [j, s] : scores) z += std::exp(s);
    for (auto& [j, s] : scores)
      for (std::size_t o = 0; o < d; ++o) out[i * d + o] += std::exp(s) / z * wh[j * d + o];
  }
  return out;
}

}  // namespace

TEST(TimeEmbed, ZeroStepAlternates) {
  const auto v = nn::time_embed(0, 8);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(v[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(TimeEmbed, BoundedAndDistinct) {
  std::vector<std::vector<double>> rows;
  for (int t = 1; t <= 100; ++t) {
    rows.push_back(nn::time_embed(t, 4));
    for (double x : rows.back()) EXPECT_LE(std::abs(x), 1.0);
  }
  double min_gap = 1e300;
  for (std::size_t a = 0; a < rows.size(); ++a)
    for (std::size_t b = a + 1; b < rows.size(); ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < 4; ++i) s += (rows[a][i] - rows[b][i]) * (rows[a][i] - rows[b][i]);
      min_gap = std::min(min_gap, std::sqrt(s));
    }
  EXPECT_GT(min_gap, 0.0);
}

TEST(TimeEmbed, FrequencyLayoutAndOddDim) {
  const auto v = nn::time_embed(3, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / 6.0);
    EXPECT_DOUBLE_EQ(v[2 * i], std::sin(3 * w));
    EXPECT_DOUBLE_EQ(v[2 * i + 1], std::cos(3 * w));
  }
  EXPECT_THROW(nn::time_embed(1, 5), std::invalid_argument);
  const Tensor seq = nn::time_embed_sequence(3, 6);
  EXPECT_EQ(seq.shape(), (ad::Shape{3, 6}));
  for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(seq.at(2, c), v[c]);
}

TEST(TrajectoryEncoder, ShapeAndSingleStep) {
  RngStream rng(1);
  ParameterStore store;
  const nn::TransformerConfig cfg{.d_model = 8, .heads = 2, .d_ff = 16, .blocks = 2};
  const nn::TrajectoryEncoder enc(store, "traj", cfg, rng);
  const Tensor table = hivae::testing::random_tensor({60, 8}, rng, -1, 1, false);
  for (std::size_t len : {1u, 5u, 50u}) {
    std::vector<NodeId> path(len);
    std::iota(path.begin(), path.end(), 3);
    EXPECT_EQ(enc(path, table).shape(), (ad::Shape{1, 8}));
  }
  const std::vector<NodeId> one{7};
  EXPECT_EQ(enc(one, table).data(), enc.sequence(one, table).data());
  EXPECT_THROW(enc(std::vector<NodeId>{}, table), std::invalid_argument);
  EXPECT_THROW(enc(std::vector<NodeId>{60}, table), std::out_of_range);
}

TEST(TrajectoryEncoder, ZeroWeightsReduceToLayerNormedMean) {
  RngStream rng(2);
  ParameterStore store;
  const nn::TransformerConfig cfg{.d_model = 6, .heads = 3, .d_ff = 12, .blocks = 2};
  const nn::TrajectoryEncoder enc(store, "traj", cfg, rng);
  zero_all(store, ".gain");
  const Tensor table = hivae::testing::random_tensor({10, 6}, rng, -1, 1, false);
  const std::vector<NodeId> path{4, 1, 8, 8, 2};

  std::vector<double> x;
  for (std::size_t t = 0; t < path.size(); ++t) {
    const auto te = nn::time_embed(static_cast<double>(t + 1), 6);
    for (std::size_t c = 0; c < 6; ++c) x.push_back(table.at(path[t], c) + te[c]);
  }
  for (int i = 0; i < 2 * 2; ++i) x = layer_norm_rows(x, 6);  // two norms per block
  std::vector<double> expected(6, 0.0);
  for (std::size_t t = 0; t < path.size(); ++t)
    for (std::size_t c = 0; c < 6; ++c) expected[c] += x[t * 6 + c] / path.size();
  EXPECT_LT(max_abs_diff(enc(path, table).data(), expected), 1e-12);
}

TEST(TrajectoryEncoder, OrderSensitive) {
  RngStream rng(3);
  ParameterStore store;
  const nn::TrajectoryEncoder enc(store, "traj", {.d_model = 8, .heads = 2, .d_ff = 16, .blocks = 1}, rng);
  const Tensor table = hivae::testing::random_tensor({20, 8}, rng, -1, 1, false);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<NodeId> path;
    for (int i = 0; i < 5; ++i) path.push_back(static_cast<NodeId>(rng.index(20)));
    std::vector<NodeId> reversed(path.rbegin(), path.rend());
    if (reversed == path) continue;
    EXPECT_GT(max_abs_diff(enc(path, table).data(), enc(reversed, table).data()), 1e-9);
  }
}

TEST(TransformerBlock, RejectsIndivisibleHeads) {
  RngStream rng(4);
  ParameterStore store;
  EXPECT_THROW(nn::TransformerBlock(store, "b", {.d_model = 6, .heads = 4, .d_ff = 8, .blocks = 1}, rng), ConfigError);
}

TEST(Gat, SingleNeighbourGetsFullAttention) {
  // 0 <- 1 only; node 0 has exactly one in-neighbour.
  const SpatialGraph g({{0, 0, 0}, {1, 1, 0}}, {{1, 0, 1.0}}, {0});
  const auto index = nn::build_attention_index(g, false);
  ASSERT_EQ(index.centers, std::vector<std::int32_t>{0});
  RngStream rng(5);
  ParameterStore store;
  const nn::GatLayer layer(store, "gat", 3, 4, 0.2, rng);
  const auto out = layer.forward(index, hivae::testing::random_tensor({2, 3}, rng, -1, 1, false));
  EXPECT_DOUBLE_EQ(out.attention[0], 1.0);
}

TEST(Gat, SelfLoopsAddedOnce) {
  const SpatialGraph g = hivae::testing::line_graph(3, {0});
  const auto index = nn::build_attention_index(g, true);
  EXPECT_EQ(index.centers, (std::vector<std::int32_t>{0, 0, 1, 1, 1, 2, 2}));
  EXPECT_EQ(index.neighbors, (std::vector<std::int32_t>{1, 0, 0, 2, 1, 1, 2}));
}

TEST(Gat, MatchesOracleAndNormalises) {
  RngStream rng(6);
  const SpatialGraph g = random_graph(rng, 7);
  const auto index = nn::build_attention_index(g, true);
  ParameterStore store;
  const nn::GatLayer layer(store, "gat", 5, 4, 0.2, rng);
  const Tensor h = hivae::testing::random_tensor({7, 5}, rng, -1, 1, false);
  const auto out = layer.forward(index, h);
  EXPECT_LT(max_abs_diff(out.features.data(), gat_oracle(index, h.data(), 5, layer)), 1e-12);
  std::vector<double> row_sum(7, 0.0);
  for (std::size_t e = 0; e < index.centers.size(); ++e) row_sum[index.centers[e]] += out.attention[e];
  for (double s : row_sum) EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_THROW(layer(index, Tensor::zeros({6, 5})), ShapeError);
}

TEST(Gat, PermutationEquivariance) {
  RngStream rng(7);
  const int n = 6;
  const SpatialGraph g = random_graph(rng, n);
  std::vector<NodeId> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.engine());

  std::vector<NodeRecord> nodes(n);
  for (int i = 0; i < n; ++i) nodes[perm[i]] = {perm[i], g.node(i).x, g.node(i).y};
  std::vector<EdgeRecord> edges;
  for (const auto& e : g.edges()) edges.push_back({perm[e.src], perm[e.dst], e.length});
  const SpatialGraph pg(nodes, edges, {perm[0]});

  ParameterStore store;
  const nn::GatStack gat(store, "gat", 2, 4, 0.2, rng);
  const Tensor h = hivae::testing::random_tensor({6, 4}, rng, -1, 1, false);
  std::vector<double> ph(h.size());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 4; ++c) ph[perm[i] * 4 + c] = h.at(i, c);

  const Tensor out = gat(nn::build_attention_index(g, true), h);
  const Tensor pout = gat(nn::build_attention_index(pg, true), Tensor::from({6, 4}, ph));
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(pout.at(perm[i], c), out.at(i, c), 1e-12);
}

TEST(EncodeGraph, PoolsPathRows) {
  RngStream rng(8);
  const SpatialGraph g = random_graph(rng, 8);
  const auto index = nn::build_attention_index(g, true);
  ParameterStore store;
  const nn::GatStack gat(store, "gat", 2, 5, 0.2, rng);
  const Tensor table = hivae::testing::random_tensor({8, 5}, rng, -1, 1, false);
  const Tensor rows = gat(index, table);
  const Tensor one = nn::encode_graph(index, table, gat, std::vector<NodeId>{3});
  EXPECT_EQ(one.shape(), (ad::Shape{1, 5}));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(one[c], rows.at(3, c));
  const Tensor a = nn::encode_graph(index, table, gat, std::vector<NodeId>{0, 1, 2});
  const Tensor b = nn::encode_graph(index, table, gat, std::vector<NodeId>{5, 6, 7});
  EXPECT_GT(max_abs_diff(a.data(), b.data()), 1e-9);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(a[c], (rows.at(0, c) + rows.at(1, c) + rows.at(2, c)) / 3, 1e-12);
}

TEST(Fuse, IdentityLayerReturnsConcatenation) {
  RngStream rng(9);
  ParameterStore store;
  nn::Mlp mlp(store, "fuse", {6, 6}, rng);
  auto& w = mlp.layers[0].weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  for (std::size_t i = 0; i < 6; ++i) w[i * 6 + i] = 1.0;
  const Tensor a = Tensor::row({1, 2, 3}), b = Tensor::row({-4, 5, -6});
  EXPECT_EQ(nn::fuse(a, b, mlp).data(), (std::vector<double>{1, 2, 3, -4, 5, -6}));
  EXPECT_THROW(nn::fuse(a, Tensor::row({1, 2}), mlp), ShapeError);
}

TEST(Fuse, GradientReachesBothInputsAndStaysFinite) {
  RngStream rng(10);
  ParameterStore store;
  const nn::Mlp mlp(store, "fuse", {8, 16, 8}, rng);
  Tensor a = hivae::testing::random_tensor({1, 4}, rng), b = hivae::testing::random_tensor({1, 4}, rng);
  ad::backward(ad::sum(ad::square(nn::fuse(a, b, mlp))));
  auto nonzero = [](const std::vector<double>& g) {
    return std::any_of(g.begin(), g.end(), [](double x) { return x != 0.0; });
  };
  EXPECT_TRUE(nonzero(a.grad()));
  EXPECT_TRUE(nonzero(b.grad()));
  const Tensor big = nn::fuse(Tensor::full({1, 4}, 1e3), Tensor::full({1, 4}, -1e3), mlp);
  for (double x : big.data()) EXPECT_TRUE(std::isfinite(x));
}

TEST(EncoderGradients, FiniteDifferenceSpotChecks) {
  RngStream rng(11);
  const SpatialGraph g = random_graph(rng, 6);
  const auto index = nn::build_attention_index(g, true);
  ParameterStore store;
  const nn::TrajectoryEncoder enc(store, "traj", {.d_model = 4, .heads = 2, .d_ff = 8, .blocks = 1}, rng);
  const nn::GatStack gat(store, "gat", 2, 4, 0.2, rng);
  const nn::Mlp fusion(store, "fuse", {8, 6, 4}, rng);
  Tensor table = hivae::testing::random_tensor({6, 4}, rng);
  const std::vector<NodeId> path{0, 1, 2, 4};
  const Tensor w = hivae::testing::random_tensor({1, 4}, rng, -1, 1, false);
  auto loss = [&] {
    return ad::sum(ad::mul(nn::fuse(enc(path, table), nn::encode_graph(index, table, gat, path), fusion), w));
  };
  auto leaves = store.tensors();
  leaves.push_back(table);
  EXPECT_LT(hivae::testing::max_grad_error(loss, leaves, 1e-5, 1.0, 5), 1e-6);
}
