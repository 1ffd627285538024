#include "hivae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hivae/error.hpp"
#include "hivae/json_fields.hpp"

namespace hivae {

using ad::Tensor;

void ModelConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string("model.") + field + ": must be >= 1");
  };
  positive(d_model, "d_model");
  positive(heads, "heads");
  positive(d_ff, "d_ff");
  positive(d_fused, "d_fused");
  positive(hidden, "hidden");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  if (blocks < 0) throw ConfigError("model.blocks: must be >= 0");
  if (gat_layers < 0) throw ConfigError("model.gat_layers: must be >= 0");
  if (d_model % 2 != 0) throw ConfigError("model.d_model: must be even");
  if (d_model % heads != 0) throw ConfigError("model.heads: must divide d_model");
  if (num_levels < 1 || num_levels > 3) throw ConfigError("model.num_levels: must be 1, 2 or 3");
  if (latent_dims.size() < static_cast<std::size_t>(num_levels))
    throw ConfigError("model.latent_dims: needs one entry per level");
  for (int d : latent_dims)
    if (d < 1) throw ConfigError("model.latent_dims: every dim must be >= 1");
  if (!(beta_kl >= 0.0)) throw ConfigError("model.beta_kl: must be >= 0");
  if (!(beta_recon >= 0.0)) throw ConfigError("model.beta_recon: must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("model.lr: must be > 0");
  if (kl_warmup_epochs < 0) throw ConfigError("model.kl_warmup_epochs: must be >= 0");
  if (embedding_init != "uniform" && embedding_init != "spatial")
    throw ConfigError("model.embedding_init: expected \"uniform\" or \"spatial\"");
  if (!(spatial_frequency > 0.0)) throw ConfigError("model.spatial_frequency: must be > 0");
  if (!(leaky_slope >= 0.0)) throw ConfigError("model.leaky_slope: must be >= 0");
}

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},
          {"heads", c.heads},
          {"d_ff", c.d_ff},
          {"blocks", c.blocks},
          {"gat_layers", c.gat_layers},
          {"gat_self_loops", c.gat_self_loops},
          {"embedding_init", c.embedding_init},
          {"spatial_frequency", c.spatial_frequency},
          {"leaky_slope", c.leaky_slope},
          {"d_fused", c.d_fused},
          {"hidden", c.hidden},
          {"latent_dims", c.latent_dims},
          {"num_levels", c.num_levels},
          {"beta_kl", c.beta_kl},
          {"beta_recon", c.beta_recon},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"kl_warmup_epochs", c.kl_warmup_epochs}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path, ModelConfig c) {
  require_keys(j, path,
               {"type", "name", "d_model", "heads", "d_ff", "blocks", "gat_layers", "gat_self_loops", "embedding_init",
                "spatial_frequency", "leaky_slope",
                "d_fused", "hidden", "latent_dims", "num_levels", "beta_kl", "beta_recon", "lr", "epochs",
                "batch_size", "seed", "kl_warmup_epochs"});
  read_field(j, "d_model", c.d_model, path);
  read_field(j, "heads", c.heads, path);
  read_field(j, "d_ff", c.d_ff, path);
  read_field(j, "blocks", c.blocks, path);
  read_field(j, "gat_layers", c.gat_layers, path);
  read_field(j, "gat_self_loops", c.gat_self_loops, path);
  read_field(j, "embedding_init", c.embedding_init, path);
  read_field(j, "spatial_frequency", c.spatial_frequency, path);
  read_field(j, "leaky_slope", c.leaky_slope, path);
  read_field(j, "d_fused", c.d_fused, path);
  read_field(j, "hidden", c.hidden, path);
  read_field(j, "latent_dims", c.latent_dims, path);
  read_field(j, "num_levels", c.num_levels, path);
  read_field(j, "beta_kl", c.beta_kl, path);
  read_field(j, "beta_recon", c.beta_recon, path);
  read_field(j, "lr", c.lr, path);
  read_field(j, "epochs", c.epochs, path);
  read_field(j, "batch_size", c.batch_size, path);
  read_field(j, "seed", c.seed, path);
  read_field(j, "kl_warmup_epochs", c.kl_warmup_epochs, path);
  return c;
}

// ---------------------------------------------------------------------------

namespace {

// cos(w . p + b) per column, p = coordinates scaled to the unit box, w drawn
// with random direction and |w| ~ 2 pi * frequency * U(0.5, 1.5).
void spatial_init(Tensor& table, const SpatialGraph& g, double frequency, std::uint64_t seed) {
  RngStream rng = RngStream::derive(seed, {stream::kModelInit, 1});
  double x0 = g.nodes()[0].x, x1 = x0, y0 = g.nodes()[0].y, y1 = y0;
  for (const auto& n : g.nodes()) {
    x0 = std::min(x0, n.x), x1 = std::max(x1, n.x);
    y0 = std::min(y0, n.y), y1 = std::max(y1, n.y);
  }
  const double extent = std::max({x1 - x0, y1 - y0, 1e-9});
  const std::size_t d = table.shape()[1];
  std::vector<double> wx(d), wy(d), b(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double angle = rng.uniform(0.0, 2 * M_PI);
    const double r = 2 * M_PI * frequency * rng.uniform(0.5, 1.5);
    wx[k] = r * std::cos(angle);
    wy[k] = r * std::sin(angle);
    b[k] = rng.uniform(0.0, 2 * M_PI);
  }
  auto& v = table.mutable_data();
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const double px = (g.nodes()[i].x - x0) / extent, py = (g.nodes()[i].y - y0) / extent;
    for (std::size_t k = 0; k < d; ++k) v[i * d + k] = std::cos(wx[k] * px + wy[k] * py + b[k]);
  }
}

}  // namespace

HiVaeModel::HiVaeModel(std::shared_ptr<const SpatialGraph> graph, ModelConfig config)
    : graph_(std::move(graph)), config_(std::move(config)) {
  config_.validate();
  RngStream rng = RngStream::derive(config_.seed, {stream::kModelInit});
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto fused = static_cast<std::size_t>(config_.d_fused);
  const auto hidden = static_cast<std::size_t>(config_.hidden);
  index_ = nn::build_attention_index(*graph_, config_.gat_self_loops);
  // Embeddings are a lookup from one-hot input, so fan-in is 1.
  embedding_ = params_.add_uniform("embedding", {graph_->num_nodes(), d}, 1.0, rng);
  if (config_.embedding_init == "spatial") spatial_init(embedding_, *graph_, config_.spatial_frequency, config_.seed);
  trajectory_ = nn::TrajectoryEncoder(params_, "trajectory",
                                      {.d_model = d,
                                       .heads = static_cast<std::size_t>(config_.heads),
                                       .d_ff = static_cast<std::size_t>(config_.d_ff),
                                       .blocks = static_cast<std::size_t>(config_.blocks)},
                                      rng);
  gat_ = nn::GatStack(params_, "gat", config_.gat_layers, d, config_.leaky_slope, rng);
  fusion_ = nn::Mlp(params_, "fusion", {2 * d, hidden, fused}, rng);

  std::size_t parent_width = 0;
  for (int l = 0; l < config_.num_levels; ++l) {
    const auto z = static_cast<std::size_t>(config_.latent_dims[l]);
    const std::string tag = "level" + std::to_string(l);
    level_encoders_.emplace_back(params_, tag + ".encoder", std::vector<std::size_t>{fused + parent_width, hidden, 2 * z},
                                 rng);
    if (l > 0) priors_.emplace_back(params_, tag + ".prior", parent_width, 2 * z, rng);
    decoders_.emplace_back(params_, tag + ".decoder", std::vector<std::size_t>{z, hidden, fused}, rng);
    parent_width += z;
  }
  predictor_ = nn::Mlp(params_, "predictor", {parent_width, hidden, graph_->num_goals()}, rng);
}

TrainConfig HiVaeModel::train_config() const {
  return {.epochs = config_.epochs,
          .batch_size = config_.batch_size,
          .lr = config_.lr,
          .seed = config_.seed,
          .kl_warmup_epochs = config_.kl_warmup_epochs};
}

Tensor HiVaeModel::graph_rows() const { return gat_(index_, embedding_); }

nn::EncoderOutput HiVaeModel::encode(std::span<const NodeId> path, const Tensor& rows) const {
  nn::EncoderOutput out;
  out.h_traj = trajectory_(path, embedding_);
  out.h_graph = nn::pool_context(rows, path);
  out.h_fused = nn::fuse(out.h_traj, out.h_graph, fusion_);
  return out;
}

std::pair<Tensor, Tensor> HiVaeModel::level_posterior(std::size_t level, const Tensor& h_fused,
                                                      const std::vector<Tensor>& parents) const {
  std::vector<Tensor> inputs{h_fused};
  inputs.insert(inputs.end(), parents.begin(), parents.begin() + static_cast<std::ptrdiff_t>(level));
  const Tensor stats = level_encoders_.at(level)(inputs.size() == 1 ? h_fused : ad::concat(inputs, 1));
  const std::size_t z = static_cast<std::size_t>(config_.latent_dims[level]);
  return {ad::slice(stats, 1, 0, z), ad::slice(stats, 1, z, z)};
}

std::pair<Tensor, Tensor> HiVaeModel::level_prior(std::size_t level, const std::vector<Tensor>& parents,
                                                  std::size_t batch) const {
  const std::size_t z = static_cast<std::size_t>(config_.latent_dims[level]);
  if (level == 0) return {Tensor::zeros({batch, z}), Tensor::zeros({batch, z})};
  const std::vector<Tensor> used(parents.begin(), parents.begin() + static_cast<std::ptrdiff_t>(level));
  const Tensor stats = priors_.at(level - 1)(used.size() == 1 ? used.front() : ad::concat(used, 1));
  return {ad::slice(stats, 1, 0, z), ad::slice(stats, 1, z, z)};
}

LatentState HiVaeModel::infer_mind_states(const Tensor& h_fused, RngStream* rng) const {
  LatentState s;
  for (std::size_t l = 0; l < static_cast<std::size_t>(config_.num_levels); ++l) {
    auto [mu, logvar] = level_posterior(l, h_fused, s.z);
    s.z.push_back(rng != nullptr ? ad::reparameterize(mu, logvar, *rng) : mu);
    s.mu.push_back(std::move(mu));
    s.logvar.push_back(std::move(logvar));
  }
  return s;
}

Tensor HiVaeModel::goal_logits(const LatentState& latents) const {
  return predictor_(latents.z.size() == 1 ? latents.z.front() : ad::concat(latents.z, 1));
}

GoalPosterior HiVaeModel::predict_goal(const LatentState& latents) const {
  return posterior_from_logits(goal_logits(latents));
}

void HiVaeModel::prepare() {
  ad::NoGradGuard guard;
  graph_rows_ = graph_rows();
}

GoalPosterior HiVaeModel::infer(std::span<const NodeId> prefix, int) const {
  if (prefix.empty()) throw std::invalid_argument("infer: empty trajectory");
  ad::NoGradGuard guard;
  const Tensor rows = graph_rows_ ? *graph_rows_ : graph_rows();
  const auto enc = encode(prefix, rows);
  return predict_goal(infer_mind_states(enc.h_fused, nullptr));
}

LossBreakdown HiVaeModel::compute_loss(std::span<const TrainSample* const> batch, RngStream* rng,
                                       double kl_weight) {
  if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
  const Tensor rows = graph_rows();
  std::vector<Tensor> traj, graph;
  std::vector<std::int32_t> targets;
  traj.reserve(batch.size());
  graph.reserve(batch.size());
  for (const TrainSample* s : batch) {
    traj.push_back(trajectory_(s->prefix, embedding_));
    graph.push_back(nn::pool_context(rows, s->prefix));
    targets.push_back(s->goal_index);
  }
  const Tensor h_fused =
      nn::fuse(batch.size() == 1 ? traj.front() : ad::concat(traj, 0),
               batch.size() == 1 ? graph.front() : ad::concat(graph, 0), fusion_);
  const LatentState latents = infer_mind_states(h_fused, rng);
  const Tensor ce = cross_entropy(goal_logits(latents), targets);

  LossBreakdown out;
  const double n = static_cast<double>(batch.size());
  const Tensor target = ad::detach(h_fused);
  Tensor kl_total = Tensor::scalar(0.0);
  Tensor recon_total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < latents.levels(); ++l) {
    const auto [mu_p, logvar_p] = level_prior(l, latents.z, batch.size());
    const Tensor kl = ad::gaussian_kl(latents.mu[l], latents.logvar[l], mu_p, logvar_p) * (1.0 / n);
    const Tensor recon = ad::mse(decoders_[l](latents.z[l]), target);
    out.kl.push_back(kl.item());
    out.recon.push_back(recon.item());
    kl_total = kl_total + kl;
    recon_total = recon_total + recon;
  }
  out.total_tensor = ce + kl_total * (config_.beta_kl * kl_weight) + recon_total * config_.beta_recon;
  out.total = out.total_tensor.item();
  out.goal_ce = ce.item();
  out.kl_sum = kl_total.item();
  out.recon_sum = recon_total.item();
  return out;
}

LossBreakdown HiVaeModel::batch_loss(std::span<const TrainSample* const> batch, RngStream& rng, double kl_weight) {
  return compute_loss(batch, &rng, kl_weight);
}

}  // namespace hivae
