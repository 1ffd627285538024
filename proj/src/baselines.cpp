#include "hivae/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hivae/error.hpp"
#include "hivae/json_fields.hpp"
#include "hivae/parallel.hpp"

namespace hivae {

using ad::Tensor;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const char* unit_name(LengthUnit u) { return u == LengthUnit::kRaw ? "raw" : "mean_edge"; }

std::vector<double> uniform(std::size_t n) { return std::vector<double>(n, 1.0 / static_cast<double>(n)); }

}  // namespace

void BtomConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("btom.beta: must be a positive number");
}

nlohmann::json btom_config_to_json(const BtomConfig& c) {
  return {{"beta", c.beta}, {"length_unit", unit_name(c.unit)}};
}

BtomConfig btom_config_from_json(const nlohmann::json& j, const std::string& path, BtomConfig c) {
  require_keys(j, path, {"type", "name", "beta", "length_unit"});
  read_field(j, "beta", c.beta, path);
  std::string unit = unit_name(c.unit);
  read_field(j, "length_unit", unit, path);
  if (unit == "mean_edge")
    c.unit = LengthUnit::kMeanEdge;
  else if (unit == "raw")
    c.unit = LengthUnit::kRaw;
  else
    throw ConfigError(path + ".length_unit: expected \"mean_edge\" or \"raw\"");
  c.validate();
  return c;
}

CostTable build_cost_table(const SpatialGraph& g, int threads) {
  CostTable table(g.num_goals());
  parallel_for(g.num_goals(), threads, [&](std::size_t k) { table[k] = distances_to(g, g.goals()[k]); });
  return table;
}

GoalPosterior btom_posterior(const SpatialGraph& g, const CostTable& costs, std::span<const NodeId> prefix,
                             double beta, std::span<const double> prior) {
  if (prefix.empty()) throw std::invalid_argument("btom: empty trajectory");
  const std::size_t n = g.num_goals();
  if (!prior.empty() && prior.size() != n) throw std::invalid_argument("btom: prior size does not match goals");
  for (NodeId v : prefix)
    if (!g.valid_node(v)) throw std::out_of_range("btom: node " + std::to_string(v) + " is not in the graph");
  double travelled = 0.0;
  for (std::size_t s = 0; s + 1 < prefix.size(); ++s) {
    const auto len = g.edge_length(prefix[s], prefix[s + 1]);
    if (!len)
      throw std::invalid_argument("btom: no edge " + std::to_string(prefix[s]) + " -> " +
                                  std::to_string(prefix[s + 1]));
    travelled += *len;
  }

  // Log prior relative to its maximum, so a uniform prior contributes exact zeros.
  std::vector<double> log_prior(n, 0.0);
  if (!prior.empty()) {
    double hi = -kInf;
    for (std::size_t k = 0; k < n; ++k) hi = std::max(hi, std::log(prior[k]));
    for (std::size_t k = 0; k < n; ++k) log_prior[k] = std::log(prior[k]) - hi;
  }

  std::vector<double> score(n);
  double best = -kInf;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& c = costs[k];
    bool reachable = true;
    for (NodeId v : prefix) reachable = reachable && std::isfinite(c[static_cast<std::size_t>(v)]);
    if (!reachable) {
      score[k] = -kInf;
      continue;
    }
    // The per-step deltas telescope to c(v_t) - c(v_1) + travelled.
    const double delta = c[static_cast<std::size_t>(prefix.back())] - c[static_cast<std::size_t>(prefix.front())] +
                         travelled;
    score[k] = log_prior[k] - beta * delta;
    best = std::max(best, score[k]);
  }

  GoalPosterior post;
  if (!std::isfinite(best)) {
    post.probs = prior.empty() ? uniform(n) : std::vector<double>(prior.begin(), prior.end());
    double total = 0.0;
    for (double p : post.probs) total += p;
    for (double& p : post.probs) p /= total;
    return post;
  }
  post.probs.resize(n);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) total += (post.probs[k] = std::exp(score[k] - best));
  for (double& p : post.probs) p /= total;
  return post;
}

const std::vector<double>& GoalPriors::for_agent(int agent_id) const {
  const auto it = agents.find(agent_id);
  return it == agents.end() ? population : it->second;
}

GoalPriors fit_goal_priors(const SpatialGraph& g, const std::vector<Episode>& train) {
  const std::size_t n = g.num_goals();
  std::vector<double> population_counts(n, 0.0);
  std::map<int, std::vector<double>> counts;
  for (const auto& e : train) {
    const auto k = static_cast<std::size_t>(goal_index_of(g, e.goal));
    population_counts[k] += 1.0;
    auto& c = counts[e.agent_id];
    if (c.empty()) c.assign(n, 0.0);
    c[k] += 1.0;
  }
  auto smooth = [n](const std::vector<double>& c) {
    double total = 0.0;
    for (double v : c) total += v;
    std::vector<double> p(n);
    for (std::size_t k = 0; k < n; ++k) p[k] = (c[k] + 1.0) / (total + static_cast<double>(n));
    return p;
  };
  GoalPriors priors;
  priors.population = smooth(population_counts);
  for (const auto& [agent, c] : counts) priors.agents[agent] = smooth(c);
  return priors;
}

BtomModel::BtomModel(std::shared_ptr<const SpatialGraph> graph, BtomConfig config, bool use_agent_priors)
    : graph_(std::move(graph)), config_(config), use_agent_priors_(use_agent_priors) {
  config_.validate();
  priors_.population = uniform(graph_->num_goals());
}

double BtomModel::beta_per_meter() const {
  return config_.unit == LengthUnit::kRaw ? config_.beta : config_.beta / graph_->mean_edge_length();
}

void BtomModel::fit(const std::vector<Episode>& train) {
  if (use_agent_priors_) priors_ = fit_goal_priors(*graph_, train);
}

void BtomModel::prepare() {
  if (!costs_) costs_ = build_cost_table(*graph_, config_.threads);
}

GoalPosterior BtomModel::infer(std::span<const NodeId> prefix, int agent_id) const {
  if (!costs_) throw std::logic_error("btom: prepare() must run before infer()");
  if (!use_agent_priors_) return btom_posterior(*graph_, *costs_, prefix, beta_per_meter());
  return btom_posterior(*graph_, *costs_, prefix, beta_per_meter(), priors_.for_agent(agent_id));
}

nlohmann::json BtomModel::to_json() const {
  nlohmann::json agents = nlohmann::json::object();
  for (const auto& [agent, p] : priors_.agents) agents[std::to_string(agent)] = p;
  return {{"kind", kind()},
          {"config", btom_config_to_json(config_)},
          {"graph_hash", graph_->content_hash()},
          {"num_goals", graph_->num_goals()},
          {"priors", {{"population", priors_.population}, {"agents", agents}}}};
}

void BtomModel::load_json(const nlohmann::json& doc) {
  try {
    if (doc.at("kind").get<std::string>() != kind())
      throw DataError("checkpoint holds a '" + doc.at("kind").get<std::string>() + "' model, expected '" + kind() +
                      "'");
    if (doc.at("graph_hash").get<std::string>() != graph_->content_hash())
      throw DataError("checkpoint graph hash does not match the graph");
    const std::size_t n = graph_->num_goals();
    GoalPriors p;
    p.population = doc.at("priors").at("population").get<std::vector<double>>();
    if (p.population.size() != n) throw DataError("checkpoint prior size does not match the goal count");
    for (auto it = doc.at("priors").at("agents").begin(); it != doc.at("priors").at("agents").end(); ++it) {
      auto values = it.value().get<std::vector<double>>();
      if (values.size() != n) throw DataError("checkpoint prior size does not match the goal count");
      p.agents[std::stoi(it.key())] = std::move(values);
    }
    BtomConfig cfg = btom_config_from_json(doc.at("config"), "checkpoint.config", config_);
    cfg.validate();
    config_ = cfg;
    costs_.reset();
    priors_ = std::move(p);
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed btom checkpoint: ") + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed btom checkpoint: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

void BaselineConfig::validate() const {
  auto positive = [](int v, const char* field) {
    if (v < 1) throw ConfigError(std::string("baseline.") + field + ": must be >= 1");
  };
  positive(d_model, "d_model");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(d_ff, "d_ff");
  positive(epochs, "epochs");
  positive(batch_size, "batch_size");
  if (blocks < 0) throw ConfigError("baseline.blocks: must be >= 0");
  if (past_episodes < 0) throw ConfigError("baseline.past_episodes: must be >= 0");
  if (d_model % 2 != 0) throw ConfigError("baseline.d_model: must be even");
  if (d_model % heads != 0) throw ConfigError("baseline.heads: must divide d_model");
  if (!(lr > 0.0)) throw ConfigError("baseline.lr: must be > 0");
}

nlohmann::json baseline_config_to_json(const BaselineConfig& c) {
  return {{"d_model", c.d_model}, {"hidden", c.hidden},       {"heads", c.heads},
          {"d_ff", c.d_ff},       {"blocks", c.blocks},       {"past_episodes", c.past_episodes},
          {"lr", c.lr},           {"epochs", c.epochs},       {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

BaselineConfig baseline_config_from_json(const nlohmann::json& j, const std::string& path, BaselineConfig c) {
  require_keys(j, path,
               {"type", "name", "d_model", "hidden", "heads", "d_ff", "blocks", "past_episodes", "lr", "epochs",
                "batch_size", "seed"});
  read_field(j, "d_model", c.d_model, path);
  read_field(j, "hidden", c.hidden, path);
  read_field(j, "heads", c.heads, path);
  read_field(j, "d_ff", c.d_ff, path);
  read_field(j, "blocks", c.blocks, path);
  read_field(j, "past_episodes", c.past_episodes, path);
  read_field(j, "lr", c.lr, path);
  read_field(j, "epochs", c.epochs, path);
  read_field(j, "batch_size", c.batch_size, path);
  read_field(j, "seed", c.seed, path);
  return c;
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const RecurrentParams& p) {
  const std::size_t w = h.dim(1);
  const Tensor gx = ad::matmul(x, p.input) + p.bias_x;
  const Tensor gh = ad::matmul(h, p.state) + p.bias_h;
  const Tensor r = ad::sigmoid(ad::slice(gx, 1, 0, w) + ad::slice(gh, 1, 0, w));
  const Tensor z = ad::sigmoid(ad::slice(gx, 1, w, w) + ad::slice(gh, 1, w, w));
  const Tensor n = ad::tanh(ad::slice(gx, 1, 2 * w, w) + r * ad::slice(gh, 1, 2 * w, w));
  return n + z * (h - n);
}

std::pair<Tensor, Tensor> lstm_cell(const Tensor& x, const Tensor& h, const Tensor& c, const RecurrentParams& p) {
  const std::size_t w = h.dim(1);
  const Tensor gates = ad::matmul(x, p.input) + p.bias_x + ad::matmul(h, p.state) + p.bias_h;
  const Tensor i = ad::sigmoid(ad::slice(gates, 1, 0, w));
  const Tensor f = ad::sigmoid(ad::slice(gates, 1, w, w));
  const Tensor g = ad::tanh(ad::slice(gates, 1, 2 * w, w));
  const Tensor o = ad::sigmoid(ad::slice(gates, 1, 3 * w, w));
  const Tensor c_next = f * c + i * g;
  return {o * ad::tanh(c_next), c_next};
}

RnnModel::RnnModel(std::shared_ptr<const SpatialGraph> graph, CellKind cell, BaselineConfig config)
    : graph_(std::move(graph)), cell_(cell), config_(config) {
  config_.validate();
  RngStream rng = RngStream::derive(config_.seed, {stream::kModelInit});
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto h = static_cast<std::size_t>(config_.hidden);
  const std::size_t gates = cell_ == CellKind::kGru ? 3 : 4;
  embedding_ = params_.add_uniform("embedding", {graph_->num_nodes(), d}, 1.0, rng);
  cell_params_.input = params_.add_fan_in("cell.input", {d, gates * h}, h, rng);
  cell_params_.state = params_.add_fan_in("cell.state", {h, gates * h}, h, rng);
  cell_params_.bias_x = params_.add_fan_in("cell.bias_x", {1, gates * h}, h, rng);
  cell_params_.bias_h = params_.add_fan_in("cell.bias_h", {1, gates * h}, h, rng);
  readout_ = nn::Linear(params_, "readout", h, graph_->num_goals(), rng);
}

TrainConfig RnnModel::train_config() const {
  return {.epochs = config_.epochs, .batch_size = config_.batch_size, .lr = config_.lr, .seed = config_.seed};
}

Tensor RnnModel::final_state(std::span<const NodeId> path) const {
  if (path.empty()) throw std::invalid_argument("rnn: empty trajectory");
  const std::vector<std::int32_t> ids(path.begin(), path.end());
  const Tensor inputs = ad::embedding_lookup(embedding_, ids);
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto w = static_cast<std::size_t>(config_.hidden);
  Tensor h = Tensor::zeros({1, w});
  Tensor c = Tensor::zeros({1, w});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const Tensor x = ad::reshape(ad::slice(inputs, 0, t, 1), {1, d});
    if (cell_ == CellKind::kGru) {
      h = gru_cell(x, h, cell_params_);
    } else {
      std::tie(h, c) = lstm_cell(x, h, c, cell_params_);
    }
  }
  return h;
}

Tensor RnnModel::logits(std::span<const NodeId> path) const { return readout_(final_state(path)); }

GoalPosterior RnnModel::infer(std::span<const NodeId> prefix, int) const {
  ad::NoGradGuard guard;
  return posterior_from_logits(logits(prefix));
}

LossBreakdown RnnModel::batch_loss(std::span<const TrainSample* const> batch, RngStream&, double) {
  if (batch.empty()) throw std::invalid_argument("rnn: empty batch");
  std::vector<Tensor> states;
  std::vector<std::int32_t> targets;
  for (const TrainSample* s : batch) {
    states.push_back(final_state(s->prefix));
    targets.push_back(s->goal_index);
  }
  const Tensor stacked = states.size() == 1 ? states.front() : ad::concat(states, 0);
  LossBreakdown out;
  out.total_tensor = cross_entropy(readout_(stacked), targets);
  out.total = out.goal_ce = out.total_tensor.item();
  return out;
}

// ---------------------------------------------------------------------------

TomNetModel::TomNetModel(std::shared_ptr<const SpatialGraph> graph, BaselineConfig config)
    : graph_(std::move(graph)), config_(config) {
  config_.validate();
  RngStream rng = RngStream::derive(config_.seed, {stream::kModelInit});
  const auto d = static_cast<std::size_t>(config_.d_model);
  const nn::TransformerConfig tc{.d_model = d,
                                 .heads = static_cast<std::size_t>(config_.heads),
                                 .d_ff = static_cast<std::size_t>(config_.d_ff),
                                 .blocks = static_cast<std::size_t>(config_.blocks)};
  char_embedding_ = params_.add_uniform("character.embedding", {graph_->num_nodes(), d}, 1.0, rng);
  char_encoder_ = nn::TrajectoryEncoder(params_, "character", tc, rng);
  mental_embedding_ = params_.add_uniform("mental.embedding", {graph_->num_nodes(), d}, 1.0, rng);
  mental_encoder_ = nn::TrajectoryEncoder(params_, "mental", tc, rng);
  predictor_ = nn::Mlp(params_, "predictor", {2 * d, static_cast<std::size_t>(config_.hidden), graph_->num_goals()},
                       rng);
}

TrainConfig TomNetModel::train_config() const {
  return {.epochs = config_.epochs, .batch_size = config_.batch_size, .lr = config_.lr, .seed = config_.seed};
}

void TomNetModel::fit(const std::vector<Episode>& train) {
  past_.clear();
  characters_.clear();
  std::map<int, std::vector<const Episode*>> by_agent;
  for (const auto& e : train) by_agent[e.agent_id].push_back(&e);
  for (auto& [agent, list] : by_agent) {
    std::sort(list.begin(), list.end(),
              [](const Episode* a, const Episode* b) { return a->episode_id < b->episode_id; });
    auto& paths = past_[agent];
    for (std::size_t i = 0; i < list.size() && static_cast<int>(i) < config_.past_episodes; ++i)
      paths.push_back(list[i]->path);
  }
}

std::vector<TrainSample> TomNetModel::training_samples(const std::vector<Episode>& train) const {
  std::map<int, std::vector<int>> ids;
  for (const auto& e : train) ids[e.agent_id].push_back(e.episode_id);
  std::vector<Episode> remaining;
  for (const auto& e : train) {
    auto& list = ids[e.agent_id];
    std::sort(list.begin(), list.end());
    const auto rank = std::lower_bound(list.begin(), list.end(), e.episode_id) - list.begin();
    if (rank >= config_.past_episodes) remaining.push_back(e);
  }
  return make_training_samples(*graph_, remaining);
}

Tensor TomNetModel::character(int agent_id) const {
  const auto d = static_cast<std::size_t>(config_.d_model);
  const auto it = past_.find(agent_id);
  if (it == past_.end() || it->second.empty()) return Tensor::zeros({1, d});
  std::vector<Tensor> rows;
  for (const auto& path : it->second) rows.push_back(char_encoder_(path, char_embedding_));
  return ad::reshape(ad::mean_over_axis(rows.size() == 1 ? rows.front() : ad::concat(rows, 0), 0), {1, d});
}

Tensor TomNetModel::logits(std::span<const NodeId> prefix, const Tensor& e_char) const {
  return predictor_(ad::concat({e_char, mental_encoder_(prefix, mental_embedding_)}, 1));
}

void TomNetModel::prepare() {
  ad::NoGradGuard guard;
  characters_.clear();
  for (const auto& [agent, paths] : past_) characters_[agent] = character(agent);
}

GoalPosterior TomNetModel::infer(std::span<const NodeId> prefix, int agent_id) const {
  if (prefix.empty()) throw std::invalid_argument("tomnet: empty trajectory");
  ad::NoGradGuard guard;
  const auto it = characters_.find(agent_id);
  return posterior_from_logits(logits(prefix, it != characters_.end() ? it->second : character(agent_id)));
}

LossBreakdown TomNetModel::batch_loss(std::span<const TrainSample* const> batch, RngStream&, double) {
  if (batch.empty()) throw std::invalid_argument("tomnet: empty batch");
  std::map<int, Tensor> chars;
  std::vector<Tensor> rows;
  std::vector<std::int32_t> targets;
  for (const TrainSample* s : batch) {
    auto it = chars.find(s->agent_id);
    if (it == chars.end()) it = chars.emplace(s->agent_id, character(s->agent_id)).first;
    rows.push_back(ad::concat({it->second, mental_encoder_(s->prefix, mental_embedding_)}, 1));
    targets.push_back(s->goal_index);
  }
  LossBreakdown out;
  out.total_tensor = cross_entropy(predictor_(rows.size() == 1 ? rows.front() : ad::concat(rows, 0)), targets);
  out.total = out.goal_ce = out.total_tensor.item();
  return out;
}

}  // namespace hivae
