#include "hivae/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "hivae/error.hpp"
#include "hivae/optim.hpp"

namespace hivae {

namespace {

bool verbose() {
  const char* v = std::getenv("HIVAE_VERBOSE");
  return v != nullptr && *v != '\0' && *v != '0';
}

}  // namespace

int goal_index_of(const SpatialGraph& g, NodeId goal) {
  const auto idx = g.goal_index(goal);
  if (!idx) throw DataError("episode goal " + std::to_string(goal) + " is not in the goal list");
  return static_cast<int>(*idx);
}

std::vector<TrainSample> make_training_samples(const SpatialGraph& g, const std::vector<Episode>& episodes,
                                               const std::vector<double>& fractions) {
  std::vector<TrainSample> out;
  out.reserve(episodes.size() * fractions.size());
  for (const auto& e : episodes) {
    const int label = goal_index_of(g, e.goal);
    for (double f : fractions) {
      const std::size_t n = prefix_length(e.path.size(), f);
      out.push_back({std::vector<NodeId>(e.path.begin(), e.path.begin() + static_cast<std::ptrdiff_t>(n)), label,
                     e.agent_id, e.episode_id});
    }
  }
  return out;
}

GoalPosterior posterior_from_logits(const ad::Tensor& logits) {
  const auto& z = logits.data();
  double hi = -INFINITY;
  for (double v : z) hi = std::max(hi, v);
  GoalPosterior p;
  p.probs.resize(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (p.probs[i] = std::exp(z[i] - hi));
  for (double& v : p.probs) v /= total;
  return p;
}

ad::Tensor cross_entropy(const ad::Tensor& logits, const std::vector<std::int32_t>& targets) {
  return -ad::mean(ad::pick(ad::log_softmax(logits, 1), targets));
}

std::vector<EpochStats> train_model(NeuralGoalModel& model, const std::vector<TrainSample>& samples,
                                    const TrainConfig& config) {
  if (samples.empty()) throw DataError("training split is empty");
  if (config.epochs < 1 || config.batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
  Adam optimizer(model.parameters().tensors(), AdamConfig{.lr = config.lr});
  std::vector<const TrainSample*> order(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) order[i] = &samples[i];

  std::vector<EpochStats> trace;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    RngStream rng = RngStream::derive(config.seed, {stream::kTraining, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    const double kl_weight =
        config.kl_warmup_epochs > 0 ? std::min(1.0, double(epoch + 1) / config.kl_warmup_epochs) : 1.0;

    EpochStats stats{.epoch = epoch + 1};
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      const std::span<const TrainSample* const> batch(order.data() + start, n);
      optimizer.zero_grad();
      LossBreakdown loss = model.batch_loss(batch, rng, kl_weight);
      if (!std::isfinite(loss.total))
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                              std::to_string(batches + 1));
      ad::backward(loss.total_tensor);
      optimizer.step();
      stats.total += loss.total;
      stats.goal_ce += loss.goal_ce;
      stats.kl += loss.kl_sum;
      stats.recon += loss.recon_sum;
      ++batches;
    }
    stats.total /= batches;
    stats.goal_ce /= batches;
    stats.kl /= batches;
    stats.recon /= batches;
    trace.push_back(stats);
    if (verbose())
      std::fprintf(stderr, "[%s] epoch %d loss %.5f ce %.5f kl %.5f recon %.5f\n", model.kind().c_str(),
                   stats.epoch, stats.total, stats.goal_ce, stats.kl, stats.recon);
  }
  model.invalidate();
  return trace;
}

nlohmann::json checkpoint_json(const NeuralGoalModel& model, const SpatialGraph& g) {
  nlohmann::json doc;
  doc["kind"] = model.kind();
  doc["config"] = model.config_json();
  doc["num_goals"] = g.num_goals();
  doc["num_nodes"] = g.num_nodes();
  doc["graph_hash"] = g.content_hash();
  doc["parameters"] = model.parameters().to_json();
  return doc;
}

void load_checkpoint(NeuralGoalModel& model, const SpatialGraph& g, const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != model.kind())
      throw DataError("checkpoint holds a '" + doc.at("kind").get<std::string>() + "' model, expected '" +
                      model.kind() + "'");
    if (doc.at("num_goals").get<std::size_t>() != g.num_goals())
      throw DataError("checkpoint was trained for " + std::to_string(doc.at("num_goals").get<std::size_t>()) +
                      " goals but the graph has " + std::to_string(g.num_goals()));
    if (doc.at("num_nodes").get<std::size_t>() != g.num_nodes())
      throw DataError("checkpoint node count does not match the graph");
    if (doc.at("graph_hash").get<std::string>() != g.content_hash())
      throw DataError("checkpoint graph hash does not match the graph");
    model.parameters().load_json(doc.at("parameters"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
  model.invalidate();
}

}  // namespace hivae
