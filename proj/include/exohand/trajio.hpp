#pragma once

// Demonstration trajectories: 21 hand keypoints plus an object reference
// pose per frame. JSON interchange format (schema 1):
//
//   {"schema": 1,
//    "meta": {"subject": "...", "object": "...", "fps": 100},
//    "frames": [{"t": 0.0, "kp": [63 numbers], "obj_p": [x,y,z],
//                "obj_q": [w,x,y,z]}, ...]}
//
// Keypoint order: wrist, then thumb, index, middle, ring, pinky, each as
// MCP, PIP, DIP, TIP. Coordinates are world-frame metres.

#include <map>
#include <string>
#include <vector>

#include "exohand/biomech.hpp"
#include "exohand/world.hpp"

namespace exohand {

struct DemoFrame {
  double t = 0.0;
  Keypoints keypoints = Keypoints::Zero();
  Vec3 object_pos = Vec3::Zero();
  Quat object_quat = Quat::Identity();
};

struct DemoTrajectory {
  std::vector<DemoFrame> frames;
  std::string object_id;
  std::string subject_id;
  double fps = 0.0;

  double duration() const { return frames.back().t - frames.front().t; }
  /// Throws ValidationError naming the offending frame.
  void validate() const;
};

using DemoSet = std::map<std::string, DemoTrajectory>;

json demo_to_json(const DemoTrajectory& traj);
/// Throws ParseError (schema) or ValidationError (content).
DemoTrajectory demo_from_json(const json& j);
std::string save_demo_string(const DemoTrajectory& traj);
void save_demo(const DemoTrajectory& traj, const std::string& path);
DemoTrajectory load_demo(const std::string& path);

/// Resamples onto t0, t0 + dt, ... with the last frame kept exactly.
/// Keypoints and positions interpolate linearly, orientations by slerp.
DemoTrajectory resample(const DemoTrajectory& traj, double dt);

/// CSV with columns t, kp0_x, kp0_y, kp0_z, ..., obj_x, obj_y, obj_z.
std::string keypoints_csv(const DemoTrajectory& traj);

/// Throws ValidationError when the set mixes keypoint conventions
/// (bone-length signature differs between trajectories).
void validate_demo_set(const DemoSet& set, double tolerance = 1e-6);

enum class DemoKind { kReach, kLift, kArc };
DemoKind demo_kind_from_string(const std::string& s);
const char* to_string(DemoKind kind);

/// Parameters of an analytic demonstration. Hand joint trajectories are
/// minimum-jerk blends between an open posture and a grasp posture; the
/// base moves along the kind-specific path and carries the object once the
/// grasp closes (lift and arc).
struct DemoSpec {
  DemoKind kind = DemoKind::kLift;
  std::string object_id = "tomato_can";
  std::string subject_id = "synthetic";
  double duration = 1.0;          // s
  double fps = 100.0;             // Hz
  Vec3 object_start = Vec3(0.0, 0.0, 0.0);  // x, y on the table; z ignored
  double object_yaw = 0.0;        // rad
  // Hand placement: object centre expressed in the palm frame at grasp.
  Vec3 grasp_offset = Vec3(0.052, 0.060, 0.0);
  // Closure timing (s) and profile.
  double close_start = 0.0;
  double close_end = 0.25;
  double settle_end = 0.35;
  double closure_peak = 1.15;     // fraction of grasp posture at close_end
  double closure_hold = 1.0;      // fraction held after settle_end
  // Lift / arc timing.
  double move_start = 0.35;
  double move_end = 0.75;
  double lift_height = 0.15;      // m (lift)
  double arc_radius = 0.10;       // m (arc)
  double arc_angle = 1.0;         // rad (arc)
  // Reach: base starts offset from the grasp pose and arrives over
  // [0, move_end - move_start]; closure is delayed by the same span.
  Vec3 reach_offset = Vec3(-0.06, -0.08, 0.05);
  // Open and grasp joint postures; empty means the model defaults.
  Vec open_posture;
  Vec grasp_posture;
};

json demo_spec_to_json(const DemoSpec& spec);
DemoSpec demo_spec_from_json(const json& j);

/// Grasp posture for an object centred at `grasp_offset` in the palm frame:
/// each finger closes along the open-to-closed path until its tip sphere
/// sinks `target_depth` into the object.
Vec default_grasp_posture(const HandModel& model, const RigidObject& object,
                          const Vec3& grasp_offset, double target_depth = 0.004);

/// Analytic arc endpoint (base and object displacement at the end of the
/// motion), in world frame.
Vec3 arc_displacement(double radius, double angle);

/// Minimum-jerk blend 10s^3 - 15s^4 + 6s^5 on [0, 1], clamped outside.
double min_jerk(double s);

/// Synthesizes a trajectory by driving the hand model along the spec.
DemoTrajectory synth_demo(const DemoSpec& spec, const HandModel& model,
                          const RigidObject& object, const SupportPlane& table,
                          const Vec3& gravity);

}  // namespace exohand
