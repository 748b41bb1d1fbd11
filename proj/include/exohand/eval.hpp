#pragma once

// Evaluation metrics over episode traces and the repeated-trial runner.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exohand/env.hpp"
#include "exohand/exoglove.hpp"
#include "exohand/rl.hpp"

namespace exohand {

struct TraceStep {
  double t = 0.0;            // s
  double obj_pos_err = 0.0;  // m
  double obj_ang_err = 0.0;  // rad
  double demo_err = 0.0;     // m
  double reward = 0.0;
  bool success = false;
  // The keypoints the metrics read.
  Vec3 wrist = Vec3::Zero();
  Vec3 middle_pip = Vec3::Zero();
};

struct EpisodeTrace {
  std::string condition;  // healthy | weak | weak+glove
  std::uint64_t seed = 0;
  std::vector<TraceStep> steps;
};

json trace_to_json(const EpisodeTrace& trace);
EpisodeTrace trace_from_json(const json& j);
/// Columns: t, obj_err, demo_err, reward, success.
std::string trace_csv(const EpisodeTrace& trace);

/// Fraction of steps with obj_pos_err <= pos_tol. Throws ValidationError on
/// an empty trace.
double success_rate(const EpisodeTrace& trace, double pos_tol = 0.025);
/// A task counts as successful when its rate exceeds `threshold`.
inline bool task_successful(double rate, double threshold = 0.8) { return rate > threshold; }

/// c_t = c_{t-1} + e_t + (punish if e_t > far).
Vec accumulated_error(const EpisodeTrace& trace, double punish = 1.0, double far = 0.2);

struct MeanStd {
  Vec mean;
  Vec std;  // sample standard deviation (zero for a single trace)
};
/// Middle-finger PIP to wrist distance per step across trials.
MeanStd pip_wrist_distance(const std::vector<EpisodeTrace>& traces);

/// glove_rate / healthy_rate. Throws ValidationError if healthy_rate <= 0.
double restoration_ratio(double glove_rate, double healthy_rate);

struct EvalConfig {
  int trials = 30;
  std::uint64_t first_seed = 1;
  double punish = 1.0;
  double far = 0.2;       // m
  double pos_tol = 0.025;  // m
  double task_threshold = 0.8;

  void validate() const;
};
json eval_config_to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const json& j);

struct ConditionMetrics {
  std::string condition;
  int trials = 0;
  double success_rate = 0.0;       // mean over trials
  double success_rate_std = 0.0;
  double task_success_fraction = 0.0;
  std::vector<double> trial_success;
  Vec accumulated_error;           // mean curve
  Vec pip_wrist_mean;
  Vec pip_wrist_std;
};

struct MetricReport {
  std::vector<ConditionMetrics> conditions;
  std::optional<double> restoration_ratio;
  double dt = 0.0;

  const ConditionMetrics* find(const std::string& condition) const;
  json to_json() const;
  /// Fig. 6 analog: t, <cond>_mean, <cond>_std per condition.
  std::string pip_wrist_csv() const;
  /// Fig. 7 analog: t, <cond> accumulated error per condition.
  std::string accumulated_error_csv() const;
};

/// Pure aggregation of traces keyed by condition label.
MetricReport build_report(const std::map<std::string, std::vector<EpisodeTrace>>& traces,
                          const EvalConfig& cfg, double dt);

inline constexpr const char* kHealthy = "healthy";
inline constexpr const char* kWeak = "weak";
inline constexpr const char* kWeakGlove = "weak+glove";

/// Runs one episode to completion. When the episode ends before the
/// horizon the last record is repeated so every trace spans the horizon.
EpisodeTrace run_episode(Environment& env, const HandEnv& hand,
                         const std::function<Vec(const Vec&)>& policy, std::uint64_t seed,
                         const std::string& condition);

/// Everything needed to build evaluation environments.
struct EvalSetup {
  SceneConfig scene;
  EnvConfig env;
  DemoTrajectory demo;
  WeaknessProfile weakness;
  GloveModel glove;
};

/// Runs cfg.trials episodes (seeds first_seed, first_seed + 1, ...).
/// `glove_agent` is required for weak+glove and ignored otherwise.
std::vector<EpisodeTrace> evaluate_condition(const std::string& condition,
                                             const EvalSetup& setup, const Agent& hand_agent,
                                             const Agent* glove_agent, const EvalConfig& cfg,
                                             ThreadPool* pool = nullptr);

}  // namespace exohand
