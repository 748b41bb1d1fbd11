#pragma once

// PPO with a Gaussian MLP policy and a separate MLP value function.
//
// All trainable numbers live in one flat vector:
//   [policy layers (W col-major, b) ..., log_std (act_dim), value layers ...]
// Hidden layers use tanh; output layers are linear.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "exohand/common.hpp"
#include "exohand/env.hpp"

namespace exohand {

struct PolicyParams {
  int obs_dim = 0;
  int act_dim = 0;
  std::vector<int> hidden = {64, 64};
  Vec flat;

  /// Number of scalars for the given architecture.
  static Eigen::Index size_for(int obs_dim, int act_dim, const std::vector<int>& hidden);
  /// Scaled-Gaussian weights, zero biases, log_std = log_std_init.
  static PolicyParams init(int obs_dim, int act_dim, const std::vector<int>& hidden,
                           Rng& rng, double log_std_init = -1.0);
  static PolicyParams zeros(int obs_dim, int act_dim, const std::vector<int>& hidden);

  Eigen::Index log_std_offset() const;
  Eigen::Map<const Vec> log_std() const;
  Eigen::Map<Vec> log_std();
  std::string digest() const;
  void validate() const;
};

/// Running mean/variance (parallel-merge form), clipped standardization.
struct RunningNorm {
  Vec mean;
  Vec var;
  double count = 0.0;
  double clip = 10.0;

  static RunningNorm identity(int dim);
  void update(const Mat& batch);  // one sample per column
  Vec apply(const Vec& x) const;
  Mat apply(const Mat& x) const;
};

struct PolicyOutput {
  Vec mean;
  Vec log_std;
  double value = 0.0;
};

/// Single-observation forward pass. Throws UsageError on dim mismatch.
PolicyOutput policy_forward(const PolicyParams& params, const Vec& obs);

/// Batched forward: columns are observations.
struct BatchOutput {
  Mat mean;   // act_dim x B
  Vec value;  // B
};
BatchOutput policy_forward_batch(const PolicyParams& params, const Mat& obs);

/// Diagonal Gaussian log density.
double gaussian_log_prob(const Vec& action, const Vec& mean, const Vec& log_std);

/// Standard GAE for one sequence. dones[t] marks that the episode ended
/// after step t; `last_value` bootstraps past the final step.
struct GaeResult {
  Vec advantages;
  Vec returns;
};
GaeResult gae(const Vec& rewards, const Vec& values, const std::vector<bool>& dones,
              double last_value, double gamma, double lam);

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double lr = 3e-4;
  int epochs = 10;
  int minibatch_size = 512;
  int n_envs = 16;
  int n_steps = 128;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  std::int64_t total_steps = 0;
  std::vector<int> hidden = {64, 64};
  double log_std_init = -1.0;
  bool normalize_obs = true;
  bool normalize_reward = true;
  bool anneal_lr = false;
  int checkpoint_every = 0;  // iterations; 0 disables periodic checkpoints
  std::uint64_t seed = 0;

  void validate() const;
};
json ppo_config_to_json(const PPOConfig& c);
PPOConfig ppo_config_from_json(const json& j);

/// Transitions of all environments, stored env-major: column e * n_steps + t.
struct RolloutBuffer {
  int n_envs = 0;
  int n_steps = 0;
  Mat obs;          // normalized observations fed to the policy
  Mat raw_obs;      // observations before normalization
  Mat actions;      // unclamped samples
  Vec log_probs;
  Vec rewards;      // training rewards (scaled when normalization is on)
  Vec raw_rewards;
  Vec values;
  std::vector<bool> dones;
  Vec last_values;  // per env, bootstrap values
  Vec advantages;
  Vec returns;

  Eigen::Index size() const { return static_cast<Eigen::Index>(n_envs) * n_steps; }
  void compute_advantages(double gamma, double lam);
  void normalize_advantages();
};

/// Minibatch view used by the loss.
struct LossStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double total = 0.0;
};

/// Loss = -mean(min(rA, clip(r)A)) + c_v mean((V - R)^2) - c_e H.
/// `idx` selects buffer columns. The gradient is w.r.t. params.flat.
LossStats ppo_loss(const PolicyParams& params, const RolloutBuffer& buf,
                   const std::vector<Eigen::Index>& idx, const PPOConfig& cfg,
                   Vec* grad = nullptr);

/// Gradient of sum_b log pi(a_b | o_b) and of sum_b V(o_b).
Vec log_prob_gradient(const PolicyParams& params, const Mat& obs, const Mat& actions);
Vec value_gradient(const PolicyParams& params, const Mat& obs);

struct Adam {
  Vec m;
  Vec v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void reset(Eigen::Index n);
  void step(Vec& params, const Vec& grad, double lr);
};

/// Runs `epochs` passes of shuffled minibatches. Throws NumericalError on a
/// non-finite loss or gradient (params are left untouched in that case).
LossStats ppo_update(const RolloutBuffer& buf, PolicyParams& params, Adam& adam,
                     const PPOConfig& cfg, Rng& rng, double lr);

/// Per-env rollout state kept across iterations.
struct EnvWorker {
  Rng rng;
  Vec obs;            // latest raw observation
  bool needs_reset = true;
  double ret_running = 0.0;  // discounted return for reward scaling
  double ep_return = 0.0;
  int ep_length = 0;
};

struct RolloutStats {
  double mean_step_reward = 0.0;
  double mean_demo_err = 0.0;
  double mean_obj_err = 0.0;
  double success_rate = 0.0;
  int episodes = 0;
  double mean_episode_reward = 0.0;  // over episodes finished in this batch
};

/// Scalar running statistics for reward scaling.
struct ScalarStat {
  double mean = 0.0;
  double var = 1.0;
  double count = 0.0;
  void update(const Vec& x);
};

/// Optional parallel execution; `threads` <= 1 runs inline.
class ThreadPool {
 public:
  explicit ThreadPool(int threads);
  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;
  /// Calls fn(i) for i in [0, n); returns after all calls complete.
  void parallel_for(int n, const std::function<void(int)>& fn);
  int threads() const { return threads_; }

 private:
  struct Impl;
  int threads_ = 1;
  std::unique_ptr<Impl> impl_;
};
/// Thread count from EXOHAND_THREADS (default 1).
int configured_threads();

/// Steps every env `n_steps` times with sampled actions. `obs_norm` is used
/// as-is; `ret_stat` (when non-null) scales rewards and is updated afterwards.
RolloutBuffer collect_rollouts(std::vector<Environment*>& envs,
                               std::vector<EnvWorker>& workers,
                               const PolicyParams& params, const RunningNorm& obs_norm,
                               int n_steps, double gamma, ScalarStat* ret_stat,
                               RolloutStats* stats, ThreadPool* pool = nullptr);

/// Convenience overload: fresh workers seeded with seed + env index.
RolloutBuffer collect_rollouts(std::vector<Environment*>& envs, const PolicyParams& params,
                               int n_steps, std::uint64_t seed);

struct IterationRecord {
  int iteration = 0;
  std::int64_t env_steps = 0;
  RolloutStats rollout;
  LossStats loss;
  double lr = 0.0;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<IterationRecord> iterations;
  double wall_time_s = 0.0;  // kept out of the JSONL records

  std::string to_jsonl() const;
  std::string summary_csv() const;
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  PolicyParams params;
  RunningNorm obs_norm;
  ScalarStat ret_stat;
  Adam adam;
  Rng rng;
  std::vector<EnvWorker> workers;
  std::vector<json> env_states;  // parallel to workers
  int iteration = 0;
  std::int64_t env_steps = 0;
  std::string stage = "init";
  TrainReport report;
  json meta = json::object();  // provenance written by the pipeline
};

json train_state_to_json(const TrainState& s, const PPOConfig& cfg);
TrainState train_state_from_json(const json& j);
void save_checkpoint(const TrainState& s, const PPOConfig& cfg, const std::string& path);
TrainState load_checkpoint(const std::string& path);

struct TrainHooks {
  std::string checkpoint_path;  // written every cfg.checkpoint_every iterations and at the end
  std::function<void(const TrainState&, const IterationRecord&)> on_iteration;
};

/// Fresh training state for the given envs.
TrainState make_train_state(const std::vector<Environment*>& envs, const PPOConfig& cfg);
/// Training state that starts from existing parameters and normalizer.
TrainState make_train_state(const std::vector<Environment*>& envs, const PPOConfig& cfg,
                            const PolicyParams& params, const RunningNorm& obs_norm);

/// Runs collect -> gae -> ppo_update until state.env_steps >= cfg.total_steps.
/// On resume the env states stored in `state` are loaded into `envs` first.
void train(std::vector<Environment*>& envs, const PPOConfig& cfg, TrainState& state,
           const TrainHooks& hooks = {});

/// One-step bandit: constant observation, reward -(a - target)^2.
class BanditEnv : public Environment {
 public:
  explicit BanditEnv(double target = 0.5) : target_(target) {}
  int obs_dim() const override { return 1; }
  int action_dim() const override { return 1; }
  Vec reset(std::uint64_t) override { return Vec::Ones(1); }
  StepResult step(const Vec& action) override;
  json save_state() const override { return json::object(); }
  void load_state(const json&) override {}

 private:
  double target_;
};

/// Deterministic (mean-action) policy with a frozen observation normalizer.
struct Agent {
  PolicyParams params;
  RunningNorm obs_norm;
  Vec act(const Vec& obs) const;
};

}  // namespace exohand
