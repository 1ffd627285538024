#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/checkpoint.hpp"
#include "hivae/graph.hpp"
#include "hivae/sim.hpp"
#include "hivae/tensor.hpp"

namespace hivae {

// Distribution over the graph's goal list.
struct GoalPosterior {
  std::vector<double> probs;
};

// Common inference contract. `infer` must be safe to call concurrently once
// `prepare` has run.
class GoalInferenceModel {
 public:
  virtual ~GoalInferenceModel() = default;
  virtual std::string kind() const = 0;
  virtual const SpatialGraph& graph() const = 0;
  std::size_t num_goals() const { return graph().num_goals(); }
  // Learns whatever the model takes from the training split besides
  // gradients (priors, character sets). Default: nothing.
  virtual void fit(const std::vector<Episode>& /*train*/) {}
  // Agent id may be ignored; negative means unknown.
  virtual GoalPosterior infer(std::span<const NodeId> prefix, int agent_id) const = 0;
  // Builds evaluation caches. Call single-threaded before parallel inference.
  virtual void prepare() {}
};

// One supervised example: a trajectory prefix with its goal label.
struct TrainSample {
  std::vector<NodeId> prefix;
  int goal_index = 0;
  int agent_id = 0;
  int episode_id = 0;
};

inline const std::vector<double> kTrainFractions = {0.25, 0.5, 0.75, 0.95};

// Every episode contributes one prefix per fraction, in episode order.
std::vector<TrainSample> make_training_samples(const SpatialGraph& g, const std::vector<Episode>& episodes,
                                               const std::vector<double>& fractions = kTrainFractions);

struct LossBreakdown {
  ad::Tensor total_tensor;  // differentiable total
  double total = 0.0;
  double goal_ce = 0.0;
  std::vector<double> kl;     // per level
  std::vector<double> recon;  // per level
  double kl_sum = 0.0;
  double recon_sum = 0.0;
};

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  int kl_warmup_epochs = 0;
};

struct EpochStats {
  int epoch = 0;
  double total = 0.0;
  double goal_ce = 0.0;
  double kl = 0.0;
  double recon = 0.0;
};

// Gradient-trained goal model.
class NeuralGoalModel : public GoalInferenceModel {
 public:
  virtual ParameterStore& parameters() = 0;
  const ParameterStore& parameters() const { return const_cast<NeuralGoalModel*>(this)->parameters(); }
  // Mean loss over a batch. kl_weight scales the configured KL coefficient
  // (warmup); rng drives any sampling.
  virtual LossBreakdown batch_loss(std::span<const TrainSample* const> batch, RngStream& rng,
                                   double kl_weight) = 0;
  virtual TrainConfig train_config() const = 0;
  // Supervised examples drawn from the training split (after fit).
  virtual std::vector<TrainSample> training_samples(const std::vector<Episode>& train) const {
    return make_training_samples(graph(), train);
  }
  virtual nlohmann::json config_json() const = 0;
  // Drops inference caches after parameters change.
  virtual void invalidate() {}
};

// Minibatch Adam with a per-epoch shuffle drawn from the training stream.
// Throws DivergenceError naming epoch and batch on a non-finite loss.
std::vector<EpochStats> train_model(NeuralGoalModel& model, const std::vector<TrainSample>& samples,
                                    const TrainConfig& config);

// Checkpoint document: {"kind", "config", "num_goals", "num_nodes", "graph_hash", "parameters"}.
nlohmann::json checkpoint_json(const NeuralGoalModel& model, const SpatialGraph& g);
// Validates kind, graph and sizes, then loads parameters.
void load_checkpoint(NeuralGoalModel& model, const SpatialGraph& g, const nlohmann::json& doc);

// Softmax of a [1, G] logits tensor into a posterior.
GoalPosterior posterior_from_logits(const ad::Tensor& logits);

// Mean cross-entropy of [B, G] logits against goal indices.
ad::Tensor cross_entropy(const ad::Tensor& logits, const std::vector<std::int32_t>& targets);

// Goal-list position of an episode's goal; throws DataError if not a goal.
int goal_index_of(const SpatialGraph& g, NodeId goal);

}  // namespace hivae
