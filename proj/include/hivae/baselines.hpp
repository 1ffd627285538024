#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/model.hpp"
#include "hivae/nn.hpp"

namespace hivae {

// ---------------------------------------------------------------------------
// Boltzmann inverse planning over shortest-path cost-to-go.

enum class LengthUnit {
  kMeanEdge,  // beta applies per mean edge length
  kRaw,       // beta applies per meter
};

struct BtomConfig {
  double beta = 1.0;
  LengthUnit unit = LengthUnit::kMeanEdge;
  int threads = 1;  // for the per-goal cost table
  void validate() const;
};

nlohmann::json btom_config_to_json(const BtomConfig& c);
BtomConfig btom_config_from_json(const nlohmann::json& j, const std::string& path, BtomConfig base = {});

// cost[goal_index][node] = shortest distance from node to that goal (+inf if unreachable).
using CostTable = std::vector<std::vector<double>>;
CostTable build_cost_table(const SpatialGraph& g, int threads = 1);

// Posterior over the goal list for an observed prefix:
//   P(g | v_1..v_t) ~ prior(g) * prod_s exp(-beta * [c(v_{s+1}, g) - c(v_s, g) + len(v_s, v_{s+1})])
// `beta_per_meter` is already in raw length units. An empty prior means
// uniform. Goals unreachable from any observed node get probability 0; if no
// goal remains, the prior is returned.
GoalPosterior btom_posterior(const SpatialGraph& g, const CostTable& costs, std::span<const NodeId> prefix,
                             double beta_per_meter, std::span<const double> prior = {});

// Goal-count-based priors: per agent (count + 1) / (n + |G|).
struct GoalPriors {
  std::vector<double> population;
  std::map<int, std::vector<double>> agents;

  // Unknown agents fall back to the population prior.
  const std::vector<double>& for_agent(int agent_id) const;
};

GoalPriors fit_goal_priors(const SpatialGraph& g, const std::vector<Episode>& train);

class BtomModel : public GoalInferenceModel {
 public:
  BtomModel(std::shared_ptr<const SpatialGraph> graph, BtomConfig config, bool use_agent_priors = false);

  std::string kind() const override { return use_agent_priors_ ? "extended_btom" : "btom"; }
  const SpatialGraph& graph() const override { return *graph_; }
  void fit(const std::vector<Episode>& train) override;
  GoalPosterior infer(std::span<const NodeId> prefix, int agent_id) const override;
  void prepare() override;

  double beta_per_meter() const;
  const BtomConfig& config() const { return config_; }
  const GoalPriors& priors() const { return priors_; }
  void set_priors(GoalPriors priors) { priors_ = std::move(priors); }

  // {"kind", "config", "graph_hash", "num_goals", "priors": {"population", "agents"}}
  nlohmann::json to_json() const;
  void load_json(const nlohmann::json& doc);

 private:
  std::shared_ptr<const SpatialGraph> graph_;
  BtomConfig config_;
  bool use_agent_priors_;
  GoalPriors priors_;
  std::optional<CostTable> costs_;
};

// ---------------------------------------------------------------------------
// Shared config for the learned baselines.

struct BaselineConfig {
  int d_model = 32;  // embedding / encoder width
  int hidden = 64;   // recurrent state or predictor width
  int heads = 2;     // ToMNet encoders
  int d_ff = 64;
  int blocks = 1;
  int past_episodes = 5;  // ToMNet character set size
  double lr = 1e-3;
  int epochs = 40;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json baseline_config_to_json(const BaselineConfig& c);
BaselineConfig baseline_config_from_json(const nlohmann::json& j, const std::string& path, BaselineConfig base = {});

// Gate parameters of a recurrent cell with `gates` blocks of width h.
struct RecurrentParams {
  ad::Tensor input;   // [d, gates*h]
  ad::Tensor state;   // [h, gates*h]
  ad::Tensor bias_x;  // [1, gates*h]
  ad::Tensor bias_h;  // [1, gates*h]
};

// r = s(x Wr + h Ur), z = s(x Wz + h Uz), n = tanh(x Wn + r * (h Un)), h' = (1 - z) n + z h
// (biases included in each term).
ad::Tensor gru_cell(const ad::Tensor& x, const ad::Tensor& h, const RecurrentParams& p);
// Gates in order i, f, g, o. Returns {h', c'}.
std::pair<ad::Tensor, ad::Tensor> lstm_cell(const ad::Tensor& x, const ad::Tensor& h, const ad::Tensor& c,
                                            const RecurrentParams& p);

enum class CellKind { kGru, kLstm };

class RnnModel : public NeuralGoalModel {
 public:
  RnnModel(std::shared_ptr<const SpatialGraph> graph, CellKind cell, BaselineConfig config);

  std::string kind() const override { return cell_ == CellKind::kGru ? "gru" : "lstm"; }
  const SpatialGraph& graph() const override { return *graph_; }
  GoalPosterior infer(std::span<const NodeId> prefix, int agent_id) const override;
  ParameterStore& parameters() override { return params_; }
  using NeuralGoalModel::parameters;
  LossBreakdown batch_loss(std::span<const TrainSample* const> batch, RngStream& rng, double kl_weight) override;
  TrainConfig train_config() const override;
  nlohmann::json config_json() const override { return baseline_config_to_json(config_); }

  // Final hidden state, [1, hidden].
  ad::Tensor final_state(std::span<const NodeId> path) const;
  ad::Tensor logits(std::span<const NodeId> path) const;
  const RecurrentParams& cell_params() const { return cell_params_; }

 private:
  std::shared_ptr<const SpatialGraph> graph_;
  CellKind cell_;
  BaselineConfig config_;
  ParameterStore params_;
  ad::Tensor embedding_;
  RecurrentParams cell_params_;
  nn::Linear readout_;
};

// Character net over an agent's past episodes plus a mental net over the
// current prefix; the predictor sees [e_char || h_current].
class TomNetModel : public NeuralGoalModel {
 public:
  TomNetModel(std::shared_ptr<const SpatialGraph> graph, BaselineConfig config);

  std::string kind() const override { return "tomnet"; }
  const SpatialGraph& graph() const override { return *graph_; }
  // Character set: the first `past_episodes` training episodes of each agent.
  void fit(const std::vector<Episode>& train) override;
  // Training samples exclude episodes used as character evidence.
  std::vector<TrainSample> training_samples(const std::vector<Episode>& train) const override;
  GoalPosterior infer(std::span<const NodeId> prefix, int agent_id) const override;
  void prepare() override;
  void invalidate() override { characters_.clear(); }

  ParameterStore& parameters() override { return params_; }
  using NeuralGoalModel::parameters;
  LossBreakdown batch_loss(std::span<const TrainSample* const> batch, RngStream& rng, double kl_weight) override;
  TrainConfig train_config() const override;
  nlohmann::json config_json() const override { return baseline_config_to_json(config_); }

  // Mean encoding of the agent's character set; zeros if it has none.
  ad::Tensor character(int agent_id) const;
  ad::Tensor logits(std::span<const NodeId> prefix, const ad::Tensor& e_char) const;
  const std::map<int, std::vector<std::vector<NodeId>>>& character_sets() const { return past_; }

 private:
  std::shared_ptr<const SpatialGraph> graph_;
  BaselineConfig config_;
  ParameterStore params_;
  ad::Tensor char_embedding_;
  ad::Tensor mental_embedding_;
  nn::TrajectoryEncoder char_encoder_;
  nn::TrajectoryEncoder mental_encoder_;
  nn::Mlp predictor_;
  std::map<int, std::vector<std::vector<NodeId>>> past_;
  std::map<int, ad::Tensor> characters_;  // evaluation cache
};

}  // namespace hivae
