#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/model.hpp"
#include "hivae/nn.hpp"

namespace hivae {

struct ModelConfig {
  // encoder
  int d_model = 64;
  int heads = 4;
  int d_ff = 128;
  int blocks = 2;
  int gat_layers = 2;
  bool gat_self_loops = true;
  // "uniform" or "spatial": random Fourier features of node coordinates.
  std::string embedding_init = "uniform";
  double spatial_frequency = 2.0;  // mean cycles across the graph extent
  double leaky_slope = 0.2;
  int d_fused = 64;
  int hidden = 64;  // width of level encoders, decoders and predictor
  // latent hierarchy, levels in order belief, desire, intention
  std::vector<int> latent_dims = {16, 16, 16};
  int num_levels = 3;
  double beta_kl = 0.1;
  double beta_recon = 0.5;
  // training
  double lr = 1e-3;
  int epochs = 40;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int kl_warmup_epochs = 5;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json model_config_to_json(const ModelConfig& c);
// Starts from `base` and overrides fields present in j.
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model",
                                   ModelConfig base = {});

struct LatentState {
  std::vector<ad::Tensor> mu;
  std::vector<ad::Tensor> logvar;
  std::vector<ad::Tensor> z;
  std::size_t levels() const { return mu.size(); }
};

class HiVaeModel : public NeuralGoalModel {
 public:
  HiVaeModel(std::shared_ptr<const SpatialGraph> graph, ModelConfig config);

  std::string kind() const override { return "hivae"; }
  const SpatialGraph& graph() const override { return *graph_; }
  GoalPosterior infer(std::span<const NodeId> prefix, int agent_id) const override;
  void prepare() override;
  void invalidate() override { graph_rows_.reset(); }

  ParameterStore& parameters() override { return params_; }
  using NeuralGoalModel::parameters;
  LossBreakdown batch_loss(std::span<const TrainSample* const> batch, RngStream& rng, double kl_weight) override;
  TrainConfig train_config() const override;
  nlohmann::json config_json() const override { return model_config_to_json(config_); }
  const ModelConfig& config() const { return config_; }

  // GAT outputs for every node, [V, d_model].
  ad::Tensor graph_rows() const;
  nn::EncoderOutput encode(std::span<const NodeId> path, const ad::Tensor& graph_rows) const;

  // Sequential b -> d -> i inference over rows of h_fused. With rng == nullptr
  // every z_l is its mean.
  LatentState infer_mind_states(const ad::Tensor& h_fused, RngStream* rng) const;
  // (mu, logvar) of q(z_l | h_fused, z_<l); `parents` holds z_0..z_{l-1}.
  std::pair<ad::Tensor, ad::Tensor> level_posterior(std::size_t level, const ad::Tensor& h_fused,
                                                    const std::vector<ad::Tensor>& parents) const;
  // (mu, logvar) of p(z_l | z_<l); standard normal at level 0.
  std::pair<ad::Tensor, ad::Tensor> level_prior(std::size_t level, const std::vector<ad::Tensor>& parents,
                                                std::size_t batch) const;

  ad::Tensor goal_logits(const LatentState& latents) const;
  GoalPosterior predict_goal(const LatentState& latents) const;

  // Composite objective over (prefix, goal) pairs; kl_weight multiplies beta_kl.
  LossBreakdown compute_loss(std::span<const TrainSample* const> batch, RngStream* rng, double kl_weight = 1.0);

  // Direct access for tests.
  nn::Mlp& predictor() { return predictor_; }
  nn::Mlp& fusion() { return fusion_; }

 private:
  std::shared_ptr<const SpatialGraph> graph_;
  ModelConfig config_;
  ParameterStore params_;
  nn::AttentionIndex index_;
  ad::Tensor embedding_;
  nn::TrajectoryEncoder trajectory_;
  nn::GatStack gat_;
  nn::Mlp fusion_;
  std::vector<nn::Mlp> level_encoders_;
  std::vector<nn::Linear> priors_;  // index l-1 for level l >= 1
  std::vector<nn::Mlp> decoders_;
  nn::Mlp predictor_;
  std::optional<ad::Tensor> graph_rows_;
};

}  // namespace hivae
