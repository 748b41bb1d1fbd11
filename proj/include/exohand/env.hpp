#pragma once

// Trajectory-tracking manipulation MDP.
//
// Observation layout (flat vector, in this order):
//   phi       joint positions then velocities over J = hand joints + 6 base
//             DoFs: [q (n), base_pos (3), base_rot (3), qd (n), base_lin (3),
//             base_ang (3)]
//   psi       object position (3), rotation vector (3), linear velocity (3)
//   tau_enc   sinusoidal encoding of the step index (d_pe)
//   theta_hat reference keypoints of the current step (63)
//
// Observation noise is additive Gaussian on phi and psi with
// sigma_i = noise_std_frac * range_i, where range_i is: the joint range for
// joint angles, 10 rad/s for joint velocities, 0.2 m (the desk workspace) for base and
// object positions, pi rad for rotation vectors, 1 m/s for base linear velocity,
// 4 rad/s for base angular velocity and 2 m/s for object velocity.

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "exohand/biomech.hpp"
#include "exohand/trajio.hpp"
#include "exohand/world.hpp"

namespace exohand {

/// Keypoints scored by the demonstration reward: wrist and five fingertips.
inline constexpr std::array<int, 6> kRewardKeypoints = {
    kWristKeypoint,
    keypoint_index(Finger::kThumb, Knuckle::kTip),
    keypoint_index(Finger::kIndex, Knuckle::kTip),
    keypoint_index(Finger::kMiddle, Knuckle::kTip),
    keypoint_index(Finger::kRing, Knuckle::kTip),
    keypoint_index(Finger::kPinky, Knuckle::kTip)};

struct RewardParams {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double alpha1 = 5.0;   // 1/m
  double alpha2 = 10.0;  // 1/m
  double beta = 0.5;     // 1/rad
  // Order follows kRewardKeypoints; the thumb tip is up-weighted.
  std::array<double, 6> keypoint_weights = {1.0, 2.0, 1.0, 1.0, 1.0, 1.0};
  double pos_tol = 0.025;  // m

  void validate() const;
};

enum class RewardMode { kDemoOnly, kDemoPlusObj };
RewardMode reward_mode_from_string(const std::string& s);
const char* to_string(RewardMode m);

struct EnvConfig {
  double dt = 0.01;   // control step, s
  int substeps = 20;  // physics steps per control step
  int horizon = 100;
  double noise_std_frac = 0.03;
  RewardParams reward{};
  RewardMode reward_mode = RewardMode::kDemoPlusObj;
  std::uint64_t seed = 0;
  int pe_dim = 8;
  double reset_perturbation = 0.02;  // rad, uniform
  double max_lin_rate = 0.5;         // m/s
  double max_ang_rate = 2.0;         // rad/s
  double runaway_error = 0.5;        // m
  double ik_tolerance = 0.03;        // m, mean keypoint residual

  void validate() const;
};

/// Everything physical about the scene.
struct SceneConfig {
  HandModel hand = desk_hand_model();
  RigidObject object = ycb_object("tomato_can");
  ContactParams hand_contact{};
  SupportPlane table{};
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  bool palm_contact = true;
};

struct ObsLayout {
  int num_joints = 0;  // hand joints (without base)
  int pe_dim = 0;
  int phi_size() const { return 2 * (num_joints + kBaseDofs); }
  int psi_size() const { return 9; }
  int phi_offset() const { return 0; }
  int psi_offset() const { return phi_size(); }
  int pe_offset() const { return psi_offset() + psi_size(); }
  int theta_offset() const { return pe_offset() + pe_dim; }
  int size() const { return theta_offset() + 3 * kNumKeypoints; }
  /// Digest of (dims, ordering).
  std::string digest() const;
};

struct StepInfo {
  bool success_step = false;
  double obj_pos_err = 0.0;  // m
  double obj_ang_err = 0.0;  // rad
  double demo_err = 0.0;     // weighted mean keypoint distance, m
  double r_demo = 0.0;
  double r_obj = 0.0;
};

struct StepResult {
  Vec obs;
  double reward = 0.0;
  bool done = false;
  StepInfo info{};
};

/// Generic episodic environment consumed by the trainer.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual int obs_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual Vec reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Vec& action) = 0;
  virtual json save_state() const = 0;
  virtual void load_state(const json& j) = 0;
};

// --- reward and encoding primitives ----------------------------------------

/// Weighted mean distance over the six reward keypoints (m).
double demo_error(const Keypoints& keypoints, const Keypoints& reference,
                  const RewardParams& params);

/// R_demo = -lambda2 * alpha2 * sum_k w_k |p_k - q_k| / sum_k w_k.
/// Inputs are the six selected keypoints (columns) in kRewardKeypoints order.
double reward_demo(const Eigen::Matrix<double, 3, 6>& keypoints,
                   const Eigen::Matrix<double, 3, 6>& reference,
                   const RewardParams& params);

/// R_obj = lambda1 * exp(-alpha1 |dp| - beta * angle(q, q_ref)).
double reward_obj(const Vec3& pos, const Quat& quat, const Vec3& ref_pos,
                  const Quat& ref_quat, const RewardParams& params);

/// PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(t / 10000^(2i/d)).
Vec positional_encoding(double t, int d_pe);

Eigen::Matrix<double, 3, 6> select_reward_keypoints(const Keypoints& kp);

/// Least-squares fit of base pose and joint angles to target keypoints.
struct IkResult {
  HandState state;
  double mean_error = 0.0;  // m
};
IkResult fit_keypoints(const HandModel& model, const Keypoints& target,
                       int max_iterations = 100);

/// The hand-object tracking environment.
class HandEnv : public Environment {
 public:
  /// `demo` is resampled onto cfg.dt. `weakness` scales muscle strength.
  HandEnv(SceneConfig scene, EnvConfig cfg, const DemoTrajectory& demo,
          const WeaknessProfile& weakness);
  HandEnv(SceneConfig scene, EnvConfig cfg, const DemoTrajectory& demo);

  int obs_dim() const override { return layout_.size(); }
  int action_dim() const override { return model_.num_muscles() + kBaseDofs; }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const Vec& action) override;
  json save_state() const override;
  void load_state(const json& j) override;

  /// Torques added to the joints on every following step (glove channel).
  void set_external_torques(const Vec& tau);
  void clear_external_torques();

  const ObsLayout& layout() const { return layout_; }
  const HandModel& model() const { return model_; }
  const SceneConfig& scene() const { return scene_; }
  const EnvConfig& config() const { return cfg_; }
  const HandState& hand_state() const { return state_; }
  const RigidObject& object() const { return object_; }
  const DemoTrajectory& demo() const { return demo_; }
  int step_index() const { return step_; }
  bool done() const { return done_; }
  Keypoints keypoints() const { return forward_kinematics(state_, model_); }
  /// Reference frame for a step index (clamped to the last frame).
  const DemoFrame& reference(int step) const;
  /// Noise-free observation of the current state.
  Vec clean_observation() const;
  /// State fitted to the first demo frame, before perturbation.
  const HandState& fitted_start() const { return fitted_start_; }
  double ik_residual() const { return ik_residual_; }
  /// Contact forces of the last substep, for diagnostics.
  const std::vector<ContactForce>& last_hand_contacts() const { return last_contacts_; }

 private:
  Vec observe();
  void physics_substep(const Vec& excitation, double h);

  SceneConfig scene_;
  EnvConfig cfg_;
  HandModel model_;  // weakened copy of scene_.hand
  DemoTrajectory demo_;
  ObsLayout layout_;
  Vec noise_range_;  // per phi/psi dimension
  WeaknessProfile identity_;

  HandState fitted_start_;
  double ik_residual_ = 0.0;

  HandState state_;
  RigidObject object_;
  Vec external_;
  int step_ = 0;
  bool done_ = true;
  Rng rng_;
  std::vector<ContactForce> last_contacts_;
};

json env_config_to_json(const EnvConfig& cfg);
EnvConfig env_config_from_json(const json& j);
json reward_params_to_json(const RewardParams& p);
RewardParams reward_params_from_json(const json& j);
json scene_to_json(const SceneConfig& scene);
SceneConfig scene_from_json(const json& j);

json hand_state_to_json(const HandState& s);
HandState hand_state_from_json(const json& j);

}  // namespace exohand
