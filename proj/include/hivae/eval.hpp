#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hivae/model.hpp"
#include "hivae/sim.hpp"

namespace hivae {

inline const std::vector<double> kEvalFractions = {0.25, 0.5, 0.75, 0.95};

// Sum of squared differences against the one-hot vector at true_goal.
double brier(const GoalPosterior& p, std::size_t true_goal);

struct BrierCurve {
  std::vector<double> fractions;
  std::vector<double> means;                    // per fraction
  std::vector<std::vector<double>> per_episode;  // [fraction][episode], episode order as given
};

// Truncate -> infer -> brier for every episode and fraction. Runs the model's
// prepare() first; inference fans out over `threads`.
BrierCurve evaluate_brier_curve(GoalInferenceModel& model, const std::vector<Episode>& episodes,
                                const std::vector<double>& fractions = kEvalFractions, int threads = 1);

struct FalseGoalCurve {
  std::vector<double> means;                    // per interval
  std::vector<std::vector<double>> per_episode;  // [episode][interval]
  std::vector<std::string> warnings;
};

// Prefix lengths for `intervals` evenly spaced checkpoints from the first
// step through pass_index (inclusive), as 1-based step counts.
std::vector<std::size_t> false_goal_checkpoints(std::size_t pass_index, int intervals);

// Mass on the false goal at each checkpoint, averaged over episodes. When
// pass_index + 1 < intervals the checkpoints collide: each distinct prefix is
// evaluated once and repeated so every curve keeps `intervals` entries, and a
// warning is recorded.
FalseGoalCurve false_goal_curve(GoalInferenceModel& model, const std::vector<FalseGoalEpisode>& episodes,
                                int intervals = 10, int threads = 1);

struct DriftResultCurves {
  BrierCurve original;
  BrierCurve drifted;
  std::vector<double> deltas;  // drifted - original, per fraction
};

// Throws DataError when the datasets were built on different graphs.
DriftResultCurves drift_evaluation(GoalInferenceModel& model, const Dataset& original, const Dataset& drifted,
                                   const std::vector<double>& fractions = kEvalFractions, int threads = 1);

struct WilcoxonResult {
  double w = 0.0;          // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  double z = 0.0;          // normal approximation with tie correction
  double p_value = 0.0;    // exact two-sided when exact, else normal
  bool exact = false;
  int n = 0;               // non-zero differences
};

// Paired signed-rank test on xs - ys. Exact enumeration for n <= 20.
// Throws std::invalid_argument on unequal or short samples (< 5) and when
// every difference is zero.
WilcoxonResult wilcoxon_signed_rank(const std::vector<double>& xs, const std::vector<double>& ys);

struct WilcoxonReport {
  std::string model_a;
  std::string model_b;
  WilcoxonResult result;
};

struct EvalReport {
  std::vector<std::string> models;  // row order
  std::vector<double> fractions;
  std::map<std::string, std::vector<double>> brier;        // model -> per fraction
  std::map<std::string, std::vector<double>> false_goal;   // model -> per interval
  std::map<std::string, std::vector<double>> drift;        // model -> per fraction
  std::optional<WilcoxonReport> wilcoxon;
  nlohmann::json metadata = nlohmann::json::object();

  bool operator==(const EvalReport&) const;
};

nlohmann::ordered_json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Writes report.json plus brier.csv, false_goal.csv and drift.csv for the
// sections that are present. Throws DataError with the path on I/O failure.
void emit_report(const EvalReport& r, const std::filesystem::path& out_dir);

// CSV text for one table, rows in r.models order (models missing from the
// table are skipped).
std::string brier_csv(const EvalReport& r);
std::string drift_csv(const EvalReport& r);
std::string false_goal_csv(const EvalReport& r);

}  // namespace hivae
