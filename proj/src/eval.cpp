#include "hivae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "hivae/error.hpp"
#include "hivae/parallel.hpp"

namespace hivae {

double brier(const GoalPosterior& p, std::size_t true_goal) {
  if (true_goal >= p.probs.size())
    throw std::out_of_range("brier: goal index " + std::to_string(true_goal) + " outside " +
                            std::to_string(p.probs.size()) + " goals");
  // Neumaier-compensated sum: thousands of tiny equal terms otherwise drift
  // by several ulps.
  double total = 0.0, carry = 0.0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    const double d = p.probs[i] - (i == true_goal ? 1.0 : 0.0);
    const double term = d * d;
    const double t = total + term;
    carry += std::abs(total) >= std::abs(term) ? (total - t) + term : (term - t) + total;
    total = t;
  }
  return total + carry;
}

BrierCurve evaluate_brier_curve(GoalInferenceModel& model, const std::vector<Episode>& episodes,
                                const std::vector<double>& fractions, int threads) {
  if (episodes.empty()) throw DataError("evaluation split is empty");
  model.prepare();
  const SpatialGraph& g = model.graph();
  std::vector<std::size_t> labels;
  labels.reserve(episodes.size());
  for (const auto& e : episodes) labels.push_back(static_cast<std::size_t>(goal_index_of(g, e.goal)));

  BrierCurve curve;
  curve.fractions = fractions;
  curve.per_episode.assign(fractions.size(), std::vector<double>(episodes.size()));
  parallel_for(episodes.size(), threads, [&](std::size_t i) {
    const Episode& e = episodes[i];
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      const std::size_t n = prefix_length(e.path.size(), fractions[f]);
      const auto post = model.infer(std::span<const NodeId>(e.path.data(), n), e.agent_id);
      curve.per_episode[f][i] = brier(post, labels[i]);
    }
  });
  for (const auto& row : curve.per_episode)
    curve.means.push_back(std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size()));
  return curve;
}

std::vector<std::size_t> false_goal_checkpoints(std::size_t pass_index, int intervals) {
  if (intervals < 1) throw std::invalid_argument("false_goal_checkpoints: intervals must be >= 1");
  std::vector<std::size_t> out;
  for (int k = 0; k < intervals; ++k) {
    const double pos = intervals == 1 ? static_cast<double>(pass_index)
                                      : static_cast<double>(k) * static_cast<double>(pass_index) / (intervals - 1);
    out.push_back(1 + static_cast<std::size_t>(std::llround(pos)));
  }
  return out;
}

FalseGoalCurve false_goal_curve(GoalInferenceModel& model, const std::vector<FalseGoalEpisode>& episodes,
                                int intervals, int threads) {
  if (episodes.empty()) throw DataError("no false-goal episodes to evaluate");
  model.prepare();
  const SpatialGraph& g = model.graph();
  FalseGoalCurve curve;
  curve.per_episode.assign(episodes.size(), std::vector<double>(static_cast<std::size_t>(intervals)));
  std::vector<std::size_t> false_index;
  for (const auto& fg : episodes) {
    false_index.push_back(static_cast<std::size_t>(goal_index_of(g, fg.false_goal)));
    if (fg.pass_index >= fg.episode.path.size())
      throw DataError("false-goal episode " + std::to_string(fg.episode.episode_id) + ": pass index past path end");
    if (fg.pass_index + 1 < static_cast<std::size_t>(intervals))
      curve.warnings.push_back("agent " + std::to_string(fg.episode.agent_id) + " episode " +
                               std::to_string(fg.episode.episode_id) + ": pass index " +
                               std::to_string(fg.pass_index) + " gives fewer than " + std::to_string(intervals) +
                               " distinct checkpoints");
  }
  parallel_for(episodes.size(), threads, [&](std::size_t i) {
    const auto& fg = episodes[i];
    const auto lengths = false_goal_checkpoints(fg.pass_index, intervals);
    double last_mass = 0.0;
    for (std::size_t k = 0; k < lengths.size(); ++k) {
      if (k == 0 || lengths[k] != lengths[k - 1]) {
        const auto post =
            model.infer(std::span<const NodeId>(fg.episode.path.data(), lengths[k]), fg.episode.agent_id);
        last_mass = post.probs[false_index[i]];
      }
      curve.per_episode[i][k] = last_mass;
    }
  });
  curve.means.assign(static_cast<std::size_t>(intervals), 0.0);
  for (const auto& row : curve.per_episode)
    for (std::size_t k = 0; k < row.size(); ++k) curve.means[k] += row[k];
  for (double& m : curve.means) m /= static_cast<double>(episodes.size());
  return curve;
}

DriftResultCurves drift_evaluation(GoalInferenceModel& model, const Dataset& original, const Dataset& drifted,
                                   const std::vector<double>& fractions, int threads) {
  if (original.graph_hash != drifted.graph_hash)
    throw DataError("drift evaluation: datasets were generated on different graphs (" + original.graph_hash +
                    " vs " + drifted.graph_hash + ")");
  DriftResultCurves out;
  out.original = evaluate_brier_curve(model, original.select(Split::kTest), fractions, threads);
  out.drifted = evaluate_brier_curve(model, drifted.select(Split::kTest), fractions, threads);
  for (std::size_t f = 0; f < fractions.size(); ++f) out.deltas.push_back(out.drifted.means[f] - out.original.means[f]);
  return out;
}

// ---------------------------------------------------------------------------

WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("wilcoxon: samples differ in length");
  if (xs.size() < 5) throw std::invalid_argument("wilcoxon: need at least 5 pairs");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (xs[i] - ys[i] != 0.0) diffs.push_back(xs[i] - ys[i]);
  if (diffs.empty()) throw std::invalid_argument("wilcoxon: all differences are zero (degenerate sample)");

  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(diffs[a]) < std::abs(diffs[b]); });
  // Doubled mid-ranks keep tied ranks integral.
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long mid2 = static_cast<long>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = mid2;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  WilcoxonResult r;
  r.n = static_cast<int>(n);
  long plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0) plus2 += rank2[i];
  }
  r.w_plus = plus2 / 2.0;
  r.w_minus = (total2 - plus2) / 2.0;
  r.w = std::min(r.w_plus, r.w_minus);

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1) / 4.0;
  const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
  r.z = var > 0 ? (r.w - mean) / std::sqrt(var) : 0.0;
  const double p_normal = std::min(1.0, std::erfc(std::abs(r.z) / std::sqrt(2.0)));

  if (n <= 20) {
    // counts[s] = number of sign assignments with doubled W+ equal to s.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long rk : rank2) {
      for (long s = reach; s >= 0; --s)
        if (counts[s] != 0.0) counts[s + rk] += counts[s];
      reach += rk;
    }
    const long w2 = std::min(plus2, total2 - plus2);
    double extreme = 0.0, all = 0.0;
    for (long s = 0; s <= total2; ++s) {
      all += counts[s];
      if (std::min(s, total2 - s) <= w2) extreme += counts[s];
    }
    r.p_value = extreme / all;
    r.exact = true;
  } else {
    r.p_value = p_normal;
  }
  return r;
}

// ---------------------------------------------------------------------------

bool EvalReport::operator==(const EvalReport& o) const {
  const bool w_equal = wilcoxon.has_value() == o.wilcoxon.has_value() &&
                       (!wilcoxon || (wilcoxon->model_a == o.wilcoxon->model_a &&
                                      wilcoxon->model_b == o.wilcoxon->model_b &&
                                      wilcoxon->result.w == o.wilcoxon->result.w &&
                                      wilcoxon->result.w_plus == o.wilcoxon->result.w_plus &&
                                      wilcoxon->result.w_minus == o.wilcoxon->result.w_minus &&
                                      wilcoxon->result.z == o.wilcoxon->result.z &&
                                      wilcoxon->result.p_value == o.wilcoxon->result.p_value &&
                                      wilcoxon->result.exact == o.wilcoxon->result.exact &&
                                      wilcoxon->result.n == o.wilcoxon->result.n));
  return w_equal && models == o.models && fractions == o.fractions && brier == o.brier &&
         false_goal == o.false_goal && drift == o.drift && metadata == o.metadata;
}

namespace {

nlohmann::ordered_json table_json(const EvalReport& r, const std::map<std::string, std::vector<double>>& table) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& m : r.models)
    if (auto it = table.find(m); it != table.end()) out[m] = it->second;
  return out;
}

std::map<std::string, std::vector<double>> table_from_json(const nlohmann::json& j) {
  std::map<std::string, std::vector<double>> out;
  for (auto it = j.begin(); it != j.end(); ++it) out[it.key()] = it.value().get<std::vector<double>>();
  return out;
}

std::string number(double v) { return nlohmann::json(v).dump(); }

std::string percent_label(double f) {
  return "f" + std::to_string(static_cast<long>(std::llround(f * 100.0)));
}

std::string table_csv(const EvalReport& r, const std::map<std::string, std::vector<double>>& table,
                      const std::vector<std::string>& columns) {
  std::ostringstream os;
  os << "model";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  for (const auto& m : r.models) {
    const auto it = table.find(m);
    if (it == table.end()) continue;
    os << m;
    for (double v : it->second) os << ',' << number(v);
    os << '\n';
  }
  return os.str();
}

std::vector<std::string> fraction_columns(const EvalReport& r) {
  std::vector<std::string> cols;
  for (double f : r.fractions) cols.push_back(percent_label(f));
  return cols;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace

nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["report_version"] = 1;
  j["models"] = r.models;
  j["fractions"] = r.fractions;
  j["brier"] = table_json(r, r.brier);
  j["false_goal"] = table_json(r, r.false_goal);
  j["drift"] = table_json(r, r.drift);
  if (r.wilcoxon) {
    const auto& w = r.wilcoxon->result;
    j["wilcoxon"] = {{"model_a", r.wilcoxon->model_a}, {"model_b", r.wilcoxon->model_b},
                     {"W", w.w},                       {"W_plus", w.w_plus},
                     {"W_minus", w.w_minus},           {"z", w.z},
                     {"p", w.p_value},                 {"exact", w.exact},
                     {"n", w.n}};
  } else {
    j["wilcoxon"] = nullptr;
  }
  j["metadata"] = nlohmann::ordered_json::parse(r.metadata.dump());
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("report_version").get<int>() != 1)
      throw DataError("unsupported report_version " + j.at("report_version").dump());
    EvalReport r;
    r.models = j.at("models").get<std::vector<std::string>>();
    r.fractions = j.at("fractions").get<std::vector<double>>();
    r.brier = table_from_json(j.at("brier"));
    r.false_goal = table_from_json(j.at("false_goal"));
    r.drift = table_from_json(j.at("drift"));
    if (!j.at("wilcoxon").is_null()) {
      const auto& w = j.at("wilcoxon");
      WilcoxonReport wr;
      wr.model_a = w.at("model_a").get<std::string>();
      wr.model_b = w.at("model_b").get<std::string>();
      wr.result.w = w.at("W").get<double>();
      wr.result.w_plus = w.at("W_plus").get<double>();
      wr.result.w_minus = w.at("W_minus").get<double>();
      wr.result.z = w.at("z").get<double>();
      wr.result.p_value = w.at("p").get<double>();
      wr.result.exact = w.at("exact").get<bool>();
      wr.result.n = w.at("n").get<int>();
      r.wilcoxon = wr;
    }
    r.metadata = j.value("metadata", nlohmann::json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
}

std::string brier_csv(const EvalReport& r) { return table_csv(r, r.brier, fraction_columns(r)); }
std::string drift_csv(const EvalReport& r) { return table_csv(r, r.drift, fraction_columns(r)); }

std::string false_goal_csv(const EvalReport& r) {
  std::size_t width = 0;
  for (const auto& [m, v] : r.false_goal) width = std::max(width, v.size());
  std::vector<std::string> cols;
  for (std::size_t i = 1; i <= width; ++i) cols.push_back("i" + std::to_string(i));
  return table_csv(r, r.false_goal, cols);
}

void emit_report(const EvalReport& r, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "report.json", report_to_json(r).dump(2) + "\n");
  if (!r.brier.empty()) write_text(out_dir / "brier.csv", brier_csv(r));
  if (!r.false_goal.empty()) write_text(out_dir / "false_goal.csv", false_goal_csv(r));
  if (!r.drift.empty()) write_text(out_dir / "drift.csv", drift_csv(r));
}

}  // namespace hivae
