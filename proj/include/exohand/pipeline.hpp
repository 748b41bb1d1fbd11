#pragma once

// Staged experiment orchestration over one run directory:
//
//   out/<run-id>/manifest.json
//   out/<run-id>/demos/       demo-gen output
//   out/<run-id>/checkpoints/ prior.json, finetune.json, glove.json
//   out/<run-id>/reports/     training logs, traces, metrics.json
//   out/<run-id>/plots/       plot-ready CSVs
//
// Stage order: prior-train -> finetune -> glove-train -> evaluate. Each stage
// reads the previous checkpoint and refuses one with the wrong stage mark.

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "exohand/env.hpp"
#include "exohand/eval.hpp"
#include "exohand/exoglove.hpp"
#include "exohand/rl.hpp"
#include "exohand/trajio.hpp"

namespace exohand {

inline constexpr int kConfigVersion = 1;
inline constexpr int kManifestVersion = 1;

/// Code version recorded in manifests.
const char* code_version();

/// A named demonstration: loaded from `path` when set, synthesized otherwise.
struct DemoSource {
  std::string name;
  DemoSpec spec;
  std::string path;
};

struct ExperimentConfig {
  std::string run_id = "desk";
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  SceneConfig scene;  // the object is replaced per demonstration
  EnvConfig env;      // reward mode is set per stage
  double prior_noise = 0.03;
  std::vector<DemoSource> prior_demos;
  DemoSource task;
  PPOConfig prior;
  PPOConfig finetune;
  PPOConfig glove;
  GloveModel glove_model;  // attached to the hand on use
  json weakness = {{"uniform", 0.5}};
  EvalConfig eval;
  std::vector<std::string> stages = {"prior-train", "finetune", "glove-train", "evaluate"};

  /// Desk preset: four synthetic prior trajectories and a held-out lift.
  static ExperimentConfig desk();
  /// Throws ConfigError on missing files, duplicate names or a bad stage order.
  void validate() const;
};

json experiment_config_to_json(const ExperimentConfig& c);
/// Keys absent from `j` keep the desk defaults; unknown keys are rejected.
ExperimentConfig experiment_config_from_json(const json& j);
ExperimentConfig load_experiment_config(const std::string& path);
std::string config_digest(const ExperimentConfig& c);

/// Per-stage PPO seed derived from the global seed.
std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage);

/// {"uniform": s} | {"groups": {group: s}} | {"scale": [...]}
WeaknessProfile weakness_from_json(const json& j, const HandModel& model);

struct RunPaths {
  std::string root;
  std::string manifest;
  std::string demos;
  std::string checkpoints;
  std::string reports;
  std::string plots;

  static RunPaths make(const std::string& out_dir, const std::string& run_id);
  std::string checkpoint(const std::string& name) const;
  /// Creates the directory tree.
  void create() const;
  /// Path relative to root (artifacts are listed relative).
  std::string relative(const std::string& path) const;
};

struct Artifact {
  std::string path;  // relative to the run root
  std::string sha256;
};

struct StageRecord {
  std::string checkpoint;  // relative path, empty for non-training stages
  std::string started;     // UTC ISO-8601
  std::string finished;
  std::vector<Artifact> artifacts;
  json info = json::object();
};

struct RunManifest {
  std::string run_id;
  std::string config_digest;
  std::string code_version;
  std::map<std::string, StageRecord> stages;

  json to_json() const;
  static RunManifest from_json(const json& j);
  /// Recomputes every artifact digest; throws ValidationError on mismatch.
  void verify(const RunPaths& paths) const;
  /// Manifest without timestamps (stable across runs).
  json stable_json() const;
};

/// Loads and verifies; returns an empty manifest when none exists.
RunManifest load_manifest(const RunPaths& paths);
void save_manifest(const RunManifest& m, const RunPaths& paths);

/// Picks one of several demonstrations uniformly on every reset.
class DemoMixEnv : public Environment {
 public:
  explicit DemoMixEnv(std::vector<std::unique_ptr<HandEnv>> envs);

  int obs_dim() const override { return envs_.front()->obs_dim(); }
  int action_dim() const override { return envs_.front()->action_dim(); }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const Vec& action) override;
  json save_state() const override;
  void load_state(const json& j) override;

  int active() const { return active_; }
  std::size_t size() const { return envs_.size(); }

 private:
  std::vector<std::unique_ptr<HandEnv>> envs_;
  int active_ = 0;
};

/// Resolves sources to trajectories (synthesized or loaded), keyed by name.
DemoSet build_demo_set(const std::vector<DemoSource>& sources, const SceneConfig& scene);
DemoTrajectory build_demo(const DemoSource& source, const SceneConfig& scene);
/// Scene with the object the demonstration manipulates.
SceneConfig scene_for(const SceneConfig& scene, const DemoTrajectory& demo);

/// Mean demo error of the deterministic policy over `episodes` seeded
/// episodes on each demonstration (m).
double tracking_error(const Agent& agent, const std::vector<HandEnv*>& envs, int episodes,
                      std::uint64_t first_seed = 1);

/// First env-step count at which the trailing `window`-iteration mean of
/// the rollout demo error is <= threshold; nullopt if never.
std::optional<std::int64_t> steps_to_threshold(const TrainReport& report, double threshold,
                                               int window);

struct StageResult {
  TrainState state;
  std::string checkpoint;  // absolute path
};

/// Writes every demonstration of the config as JSON plus keypoint CSV.
std::vector<std::string> cmd_demo_gen(const ExperimentConfig& cfg);
StageResult cmd_prior_train(const ExperimentConfig& cfg);

struct FinetuneOptions {
  bool from_scratch = false;  // skip the prior (baseline runs)
};
StageResult cmd_finetune(const ExperimentConfig& cfg, const FinetuneOptions& opts = {});
StageResult cmd_glove_train(const ExperimentConfig& cfg);

struct EvaluateResult {
  MetricReport report;
  std::vector<std::string> missing;  // conditions skipped for lack of a checkpoint
};
/// Runs the requested conditions (all three when empty).
EvaluateResult cmd_evaluate(const ExperimentConfig& cfg,
                            const std::vector<std::string>& conditions = {});
/// Rebuilds metrics and plot CSVs from the traces saved by cmd_evaluate.
MetricReport cmd_report(const ExperimentConfig& cfg);

/// Runs cfg.stages in order.
void run_pipeline(const ExperimentConfig& cfg);

/// Maps an exception onto the CLI exit code (2 config/parse, 3 validation,
/// 4 numerical, 1 otherwise).
int exit_code_for(const std::exception& e);

}  // namespace exohand
