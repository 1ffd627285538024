#include "hivae/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "hivae/error.hpp"

namespace hivae::nn {

Linear::Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, RngStream& rng)
    : weight(store.add_fan_in(name + ".weight", {in, out}, in, rng)),
      bias(store.add_constant(name + ".bias", {1, out}, 0.0)) {}

Tensor Linear::operator()(const Tensor& x) const { return ad::matmul(x, weight) + bias; }

Mlp::Mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& dims, RngStream& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp needs at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(store, name + "." + std::to_string(i), dims[i], dims[i + 1], rng);
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

std::vector<double> time_embed(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("time_embed: dim must be even and positive");
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  return out;
}

Tensor time_embed_sequence(std::size_t steps, std::size_t dim) {
  std::vector<double> values;
  values.reserve(steps * dim);
  for (std::size_t t = 1; t <= steps; ++t) {
    const auto row = time_embed(static_cast<double>(t), dim);
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor::from({steps, dim}, std::move(values));
}

// ---------------------------------------------------------------------------

TransformerBlock::TransformerBlock(ParameterStore& store, const std::string& name, const TransformerConfig& cfg,
                                   RngStream& rng)
    : query(store, name + ".query", cfg.d_model, cfg.d_model, rng),
      key(store, name + ".key", cfg.d_model, cfg.d_model, rng),
      value(store, name + ".value", cfg.d_model, cfg.d_model, rng),
      output(store, name + ".output", cfg.d_model, cfg.d_model, rng),
      ff_in(store, name + ".ff_in", cfg.d_model, cfg.d_ff, rng),
      ff_out(store, name + ".ff_out", cfg.d_ff, cfg.d_model, rng),
      ln1_gain(store.add_constant(name + ".ln1.gain", {1, cfg.d_model}, 1.0)),
      ln1_bias(store.add_constant(name + ".ln1.bias", {1, cfg.d_model}, 0.0)),
      ln2_gain(store.add_constant(name + ".ln2.gain", {1, cfg.d_model}, 1.0)),
      ln2_bias(store.add_constant(name + ".ln2.bias", {1, cfg.d_model}, 0.0)),
      heads(cfg.heads) {
  if (cfg.heads == 0 || cfg.d_model % cfg.heads != 0)
    throw ConfigError("transformer d_model must be divisible by the head count");
}

Tensor TransformerBlock::operator()(const Tensor& x) const {
  const std::size_t d = x.dim(1);
  const std::size_t dh = d / heads;
  const Tensor q = query(x), k = key(x), v = value(x);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> per_head;
  per_head.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = ad::slice(q, 1, h * dh, dh);
    const Tensor kh = ad::slice(k, 1, h * dh, dh);
    const Tensor vh = ad::slice(v, 1, h * dh, dh);
    const Tensor weights = ad::softmax(ad::matmul(qh, ad::transpose(kh)) * scale, 1);
    per_head.push_back(ad::matmul(weights, vh));
  }
  const Tensor attended = output(heads == 1 ? per_head.front() : ad::concat(per_head, 1));
  const Tensor h1 = ad::layer_norm(x + attended) * ln1_gain + ln1_bias;
  const Tensor ff = ff_out(ad::relu(ff_in(h1)));
  return ad::layer_norm(h1 + ff) * ln2_gain + ln2_bias;
}

TrajectoryEncoder::TrajectoryEncoder(ParameterStore& store, const std::string& name, const TransformerConfig& cfg,
                                     RngStream& rng)
    : d_model(cfg.d_model) {
  if (cfg.d_model % 2 != 0) throw ConfigError("d_model must be even for the sinusoidal time encoding");
  for (std::size_t b = 0; b < cfg.blocks; ++b)
    blocks.emplace_back(store, name + ".block" + std::to_string(b), cfg, rng);
}

Tensor TrajectoryEncoder::sequence(std::span<const NodeId> path, const Tensor& embedding_table) const {
  if (path.empty()) throw std::invalid_argument("encode_trajectory: empty path");
  const std::vector<std::int32_t> ids(path.begin(), path.end());
  Tensor x = ad::embedding_lookup(embedding_table, ids) + time_embed_sequence(path.size(), d_model);
  for (const auto& block : blocks) x = block(x);
  return x;
}

Tensor TrajectoryEncoder::operator()(std::span<const NodeId> path, const Tensor& embedding_table) const {
  return ad::reshape(ad::mean_over_axis(sequence(path, embedding_table), 0), {1, d_model});
}

// ---------------------------------------------------------------------------

AttentionIndex build_attention_index(const SpatialGraph& g, bool self_loops) {
  AttentionIndex index;
  index.num_nodes = g.num_nodes();
  for (const auto& node : g.nodes()) {
    const NodeId i = node.id;
    NodeId previous = -1;
    bool self_seen = false;
    for (std::size_t e : g.in_edges(i)) {
      const NodeId j = g.edges()[e].src;
      if (j == previous) continue;  // parallel edges attend once
      previous = j;
      if (j == i) {
        if (!self_loops) continue;
        self_seen = true;
      }
      index.centers.push_back(i);
      index.neighbors.push_back(j);
    }
    if (self_loops && !self_seen) {
      index.centers.push_back(i);
      index.neighbors.push_back(i);
    }
  }
  return index;
}

GatLayer::GatLayer(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_out,
                   double slope, RngStream& rng)
    : weight(store.add_fan_in(name + ".weight", {d_in, d_out}, d_in, rng)),
      attention(store.add_fan_in(name + ".attention", {2 * d_out, 1}, 2 * d_out, rng)),
      leaky_slope(slope) {}

GatLayer::Output GatLayer::forward(const AttentionIndex& index, const Tensor& node_features) const {
  if (node_features.rank() != 2 || node_features.dim(0) != index.num_nodes || node_features.dim(1) != weight.dim(0))
    throw ShapeError("gat_layer: features " + ad::shape_string(node_features.shape()) + " do not match " +
                     std::to_string(index.num_nodes) + " nodes x " + std::to_string(weight.dim(0)) + " dims");
  const std::size_t d_out = weight.dim(1);
  const Tensor projected = ad::matmul(node_features, weight);  // W h
  const Tensor center_score = ad::matmul(projected, ad::slice(attention, 0, 0, d_out));
  const Tensor neighbor_score = ad::matmul(projected, ad::slice(attention, 0, d_out, d_out));
  const Tensor logits = ad::leaky_relu(ad::embedding_lookup(center_score, index.centers) +
                                           ad::embedding_lookup(neighbor_score, index.neighbors),
                                       leaky_slope);
  Output out;
  out.attention = ad::segment_softmax(logits, index.centers, index.num_nodes);
  const Tensor messages = out.attention * ad::embedding_lookup(projected, index.neighbors);
  out.features = ad::segment_sum(messages, index.centers, index.num_nodes);
  return out;
}

GatStack::GatStack(ParameterStore& store, const std::string& name, std::size_t count, std::size_t dim,
                   double slope, RngStream& rng) {
  for (std::size_t l = 0; l < count; ++l)
    layers.emplace_back(store, name + ".layer" + std::to_string(l), dim, dim, slope, rng);
}

Tensor GatStack::operator()(const AttentionIndex& index, const Tensor& node_embeddings) const {
  Tensor h = node_embeddings;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = layers[l](index, h);
    if (l + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

Tensor pool_context(const Tensor& node_rows, std::span<const NodeId> context_path) {
  if (context_path.empty()) throw std::invalid_argument("encode_graph: empty context path");
  const std::vector<std::int32_t> ids(context_path.begin(), context_path.end());
  const Tensor rows = ad::embedding_lookup(node_rows, ids);
  return ad::reshape(ad::mean_over_axis(rows, 0), {1, node_rows.dim(1)});
}

Tensor encode_graph(const AttentionIndex& index, const Tensor& embedding_table, const GatStack& gat,
                    std::span<const NodeId> context_path) {
  return pool_context(gat(index, embedding_table), context_path);
}

Tensor fuse(const Tensor& h_traj, const Tensor& h_graph, const Mlp& fusion) {
  const Tensor joined = ad::concat({h_traj, h_graph}, 1);
  if (joined.dim(1) != fusion.in_dim())
    throw ShapeError("fuse: concatenated width " + std::to_string(joined.dim(1)) + " but MLP expects " +
                     std::to_string(fusion.in_dim()));
  return fusion(joined);
}

}  // namespace hivae::nn
