#pragma once

// Simplified tendon-driven musculoskeletal hand.
//
// The kinematic tree is a kinematically driven base (shoulder stand-in),
// a chain of wrist joints, a rigid palm and five finger chains. Each finger
// chain carries exactly three bones, which yields the 21-keypoint layout
// (wrist, then per finger MCP, PIP, DIP, TIP). Joints that share a location
// (for example an abduction DoF at the MCP) are expressed with a zero bone.
//
// Joint dynamics are per-joint second order and inertially decoupled:
//   I q'' = tau_muscle + tau_ext - d q' - k (q - q_neutral) - tau_limit
// Coupling between joints comes from tendons (moment-arm rows) and from
// contact forces mapped through point Jacobians.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exohand/common.hpp"

namespace exohand {

inline constexpr int kNumKeypoints = 21;
inline constexpr int kNumFingers = 5;
inline constexpr int kBaseDofs = 6;

enum class Finger : int { kThumb = 0, kIndex, kMiddle, kRing, kPinky };

/// Keypoint slot within a finger chain.
enum class Knuckle : int { kMcp = 0, kPip, kDip, kTip };

/// Index of a keypoint in the 21-point layout.
constexpr int keypoint_index(Finger f, Knuckle k) {
  return 1 + 4 * static_cast<int>(f) + static_cast<int>(k);
}
inline constexpr int kWristKeypoint = 0;

/// Columns are keypoints in world coordinates (m).
using Keypoints = Eigen::Matrix<double, 3, kNumKeypoints>;

const char* finger_name(Finger f);

struct Joint {
  std::string name;
  std::string segment;  // parent segment, e.g. "palm" or "index_proximal"
  int chain = -1;       // -1: wrist; 0..4: finger chain (thumb first)
  Vec3 axis = Vec3::UnitZ();  // unit axis in the parent frame
  double lo = -1.0;
  double hi = 1.0;
  double inertia = 1e-3;    // kg m^2
  double damping = 0.05;    // N m s / rad
  double stiffness = 0.0;   // passive N m / rad toward `neutral`
  double neutral = 0.0;     // rad
  double bone = 0.0;        // length of the bone after this joint, m

  bool operator==(const Joint&) const = default;
};

struct FingerChain {
  std::string name;
  Vec3 origin = Vec3::Zero();       // MCP keypoint in the palm frame
  Mat3 frame = Mat3::Identity();    // bones run along the local +x axis

  bool operator==(const FingerChain&) const = default;
};

struct Muscle {
  std::string name;
  std::string group;  // flexor | extensor | adductor | ...
  double f_max = 1.0;
  Vec moment_arms;    // signed, one entry per joint (m)
  double tau_act = 0.015;
  double tau_deact = 0.050;

  bool operator==(const Muscle& o) const {
    return name == o.name && group == o.group && f_max == o.f_max &&
           moment_arms.size() == o.moment_arms.size() &&
           moment_arms == o.moment_arms && tau_act == o.tau_act &&
           tau_deact == o.tau_deact;
  }
};

struct HandModel {
  std::vector<Joint> joints;
  std::array<FingerChain, kNumFingers> chains;
  std::vector<Muscle> muscles;
  double fingertip_radius = 0.009;
  Vec3 palm_sphere_center = Vec3::Zero();  // palm frame
  double palm_sphere_radius = 0.0;          // 0 disables the palm contact
  double limit_stiffness = 20.0;            // N m / rad
  double limit_margin = 0.05;               // rad inside the hard limit

  int num_joints() const { return static_cast<int>(joints.size()); }
  int num_muscles() const { return static_cast<int>(muscles.size()); }
  /// Throws ConfigError when the joint name is unknown.
  int joint_index(const std::string& name) const;
  std::optional<int> find_joint(const std::string& name) const;
  /// Joint indices of a chain in kinematic order.
  std::vector<int> chain_joints(int chain) const;
  /// J x M matrix of moment arms.
  Mat moment_arm_matrix() const;
  Vec lower_limits() const;
  Vec upper_limits() const;
  Vec neutral_pose() const;

  /// Throws ConfigError on any broken invariant.
  void validate() const;

  bool operator==(const HandModel&) const = default;
};

struct HandState {
  Vec q;   // joint angles (rad)
  Vec qd;  // joint velocities (rad/s)
  Vec a;   // muscle activations in [0, 1]
  Vec3 base_pos = Vec3::Zero();  // m
  Vec3 base_rot = Vec3::Zero();  // rotation vector (rad)
  Vec3 base_lin_vel = Vec3::Zero();  // world frame, m/s
  Vec3 base_ang_vel = Vec3::Zero();  // world frame, rad/s

  static HandState at_rest(const HandModel& model);
};

struct WeaknessProfile {
  Vec scale;

  static WeaknessProfile identity(int num_muscles);
  static WeaknessProfile uniform(int num_muscles, double s);
  /// Scales by muscle group; groups not listed keep 1.0.
  static WeaknessProfile by_group(const HandModel& model,
                                  const std::map<std::string, double>& groups);
  void validate(int num_muscles) const;
};

/// First-order activation lag with separate activation and deactivation
/// time constants, explicit Euler, clamped to [0, 1].
Vec activation_step(const Vec& a, const Vec& u, const HandModel& model,
                    double dt);

/// tau_j = sum_m r_jm * a_m * f_max_m * scale_m.
Vec muscle_torques(const Vec& a, const HandModel& model,
                   const WeaknessProfile& weakness);

/// Semi-implicit Euler step of the joints and the kinematic base.
/// Throws StepError on non-finite torques.
HandState dynamics_step(const HandState& state, const HandModel& model,
                        const Vec& joint_torques, const Vec& external_torques,
                        double dt);

/// Returns a copy of `model` with every f_max scaled by the profile.
HandModel apply_weakness(const HandModel& model,
                         const WeaknessProfile& profile);

/// World-frame kinematic quantities of one hand configuration.
struct Kinematics {
  Keypoints keypoints;
  Mat3 base_rotation;
  Mat3 palm_rotation;
  std::vector<Vec3> joint_axis;    // world axis per joint
  std::vector<Vec3> joint_origin;  // world point on the axis per joint
  Vec3 palm_sphere_center;

  /// World position of fingertip sphere centres (the TIP keypoints).
  Vec3 fingertip(Finger f) const {
    return keypoints.col(keypoint_index(f, Knuckle::kTip));
  }
};

Kinematics compute_kinematics(const HandState& state, const HandModel& model);

/// 21 keypoints in world coordinates.
Keypoints forward_kinematics(const HandState& state, const HandModel& model);

/// Joints that move a point attached to `chain` (-1 = palm).
std::vector<int> supporting_joints(const HandModel& model, int chain);

/// World velocity of a point rigidly attached to `chain` (-1 = palm).
Vec3 point_velocity(const Kinematics& kin, const HandState& state,
                    const HandModel& model, int chain, const Vec3& point);

/// Adds J^T f for a world force `force` applied at `point` on `chain`.
void accumulate_point_force(const Kinematics& kin, const HandModel& model,
                            int chain, const Vec3& point, const Vec3& force,
                            Vec& joint_torques);

json hand_model_to_json(const HandModel& model);
HandModel hand_model_from_json(const json& j);

/// 21 rows of "x,y,z" with a header line.
std::string keypoints_to_csv(const Keypoints& kp);
Keypoints keypoints_from_csv(const std::string& text);

/// Desk preset: 17 joints (wrist 2, five fingers x 3), 13 muscles.
HandModel desk_hand_model();

}  // namespace exohand
