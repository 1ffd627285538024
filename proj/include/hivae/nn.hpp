#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hivae/checkpoint.hpp"
#include "hivae/graph.hpp"
#include "hivae/tensor.hpp"

namespace hivae::nn {

using ad::Tensor;

// Affine map x W + b over rows of x.
struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, RngStream& rng);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_dim() const { return weight.dim(0); }
  std::size_t out_dim() const { return weight.dim(1); }
};

// Linear layers with ReLU between them (none after the last).
struct Mlp {
  std::vector<Linear> layers;

  Mlp() = default;
  // dims = {in, hidden..., out}
  Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims, RngStream& rng);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

// Sinusoidal encoding of step t: [sin(t w_0), cos(t w_0), sin(t w_1), ...]
// with w_i = 10000^(-2i/dim). Throws std::invalid_argument for odd dim.
std::vector<double> time_embed(double t, std::size_t dim);
// Rows t = 1..steps, shape [steps, dim].
Tensor time_embed_sequence(std::size_t steps, std::size_t dim);

struct TransformerConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 128;
  std::size_t blocks = 2;
};

// Post-norm encoder block: x = LN(x + MHA(x)); x = LN(x + FF(x)), each LN with
// learned gain and bias.
struct TransformerBlock {
  Linear query, key, value, output;
  Linear ff_in, ff_out;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  std::size_t heads = 1;

  TransformerBlock() = default;
  TransformerBlock(ParameterStore& store, const std::string& name, const TransformerConfig& cfg, RngStream& rng);
  Tensor operator()(const Tensor& x) const;  // [T, d] -> [T, d]
};

// Mean-pooled transformer over Embed(v_t) + TimeEmbed(t).
struct TrajectoryEncoder {
  std::vector<TransformerBlock> blocks;
  std::size_t d_model = 0;

  TrajectoryEncoder() = default;
  TrajectoryEncoder(ParameterStore& store, const std::string& name, const TransformerConfig& cfg, RngStream& rng);
  // Returns h_traj of shape [1, d_model]. Throws std::invalid_argument for an
  // empty path and std::out_of_range for node ids outside the table.
  Tensor operator()(std::span<const NodeId> path, const Tensor& embedding_table) const;
  // Per-step outputs before pooling, [T, d_model].
  Tensor sequence(std::span<const NodeId> path, const Tensor& embedding_table) const;
};

// Precomputed (center, neighbour) pairs for attention. Node i attends over
// the sources of its incoming edges, plus itself when self loops are on.
struct AttentionIndex {
  std::size_t num_nodes = 0;
  std::vector<std::int32_t> centers;
  std::vector<std::int32_t> neighbors;
};

AttentionIndex build_attention_index(const SpatialGraph& g, bool self_loops);

struct GatLayer {
  Tensor weight;     // W: [d_in, d_out]
  Tensor attention;  // a: [2 * d_out, 1], first half scores the centre node
  double leaky_slope = 0.2;

  GatLayer() = default;
  GatLayer(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
           double leaky_slope, RngStream& rng);

  struct Output {
    Tensor features;   // [V, d_out]
    Tensor attention;  // [E, 1], aligned with index.centers / index.neighbors
  };
  Output forward(const AttentionIndex& index, const Tensor& node_features) const;
  Tensor operator()(const AttentionIndex& index, const Tensor& node_features) const {
    return forward(index, node_features).features;
  }
};

// Stacked GAT layers, ReLU between layers.
struct GatStack {
  std::vector<GatLayer> layers;

  GatStack() = default;
  GatStack(ParameterStore& store, const std::string& name, std::size_t layers, std::size_t dim,
           double leaky_slope, RngStream& rng);
  Tensor operator()(const AttentionIndex& index, const Tensor& node_embeddings) const;
};

// Mean of the rows of `node_rows` at the nodes of `context_path`: [1, d].
Tensor pool_context(const Tensor& node_rows, std::span<const NodeId> context_path);

// h_graph from a GAT stack run over the initial node embeddings.
Tensor encode_graph(const AttentionIndex& index, const Tensor& embedding_table, const GatStack& gat,
                    std::span<const NodeId> context_path);

// h_fused = MLP([h_traj || h_graph]).
Tensor fuse(const Tensor& h_traj, const Tensor& h_graph, const Mlp& fusion);

struct EncoderOutput {
  Tensor h_traj;
  Tensor h_graph;
  Tensor h_fused;
};

}  // namespace hivae::nn
