#include "exohand/trajio.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace exohand {

void DemoTrajectory::validate() const {
  if (frames.size() < 2) throw ValidationError("trajectory needs at least 2 frames");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& f = frames[i];
    const std::string where = "frame " + std::to_string(i);
    if (!std::isfinite(f.t)) throw ValidationError(where + ": time is not finite");
    if (i > 0 && !(f.t > frames[i - 1].t)) {
      throw ValidationError(where + ": timestamps must be strictly increasing");
    }
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!f.keypoints.col(k).allFinite()) {
        throw ValidationError(where + ": keypoint " + std::to_string(k) +
                              " is not finite");
      }
    }
    if (!f.object_pos.allFinite()) {
      throw ValidationError(where + ": object position is not finite");
    }
    if (!f.object_quat.coeffs().allFinite() ||
        std::abs(f.object_quat.norm() - 1.0) > 1e-6) {
      throw ValidationError(where + ": object quaternion is not unit length");
    }
  }
}

json demo_to_json(const DemoTrajectory& traj) {
  json frames = json::array();
  for (const auto& f : traj.frames) {
    json kp = json::array();
    for (int k = 0; k < kNumKeypoints; ++k) {
      for (int d = 0; d < 3; ++d) kp.push_back(f.keypoints(d, k));
    }
    frames.push_back({{"t", f.t},
                      {"kp", std::move(kp)},
                      {"obj_p", to_json(f.object_pos)},
                      {"obj_q", to_json(f.object_quat)}});
  }
  return {{"schema", 1},
          {"meta",
           {{"subject", traj.subject_id}, {"object", traj.object_id}, {"fps", traj.fps}}},
          {"frames", std::move(frames)}};
}

namespace {

double number_at(const json& arr, std::size_t i, const std::string& where,
                 const char* what) {
  const auto& v = arr[i];
  if (v.is_null()) {
    throw ValidationError(where + ": " + what + " " + std::to_string(i) +
                          " is not finite");
  }
  if (!v.is_number()) {
    throw ParseError(where + ": " + what + " " + std::to_string(i) +
                     " is not a number");
  }
  return v.get<double>();
}

}  // namespace

DemoTrajectory demo_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("demo file must be a JSON object");
  if (j.value("schema", 0) != 1) throw ParseError("unsupported demo schema (need 1)");
  if (!j.contains("meta") || !j.contains("frames") || !j["frames"].is_array()) {
    throw ParseError("demo file needs meta and frames");
  }
  DemoTrajectory traj;
  const auto& meta = j["meta"];
  traj.subject_id = meta.value("subject", std::string());
  traj.object_id = meta.value("object", std::string());
  traj.fps = meta.value("fps", 0.0);
  const auto& frames = j["frames"];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& fj = frames[i];
    const std::string where = "frame " + std::to_string(i);
    if (!fj.is_object() || !fj.contains("t") || !fj.contains("kp") ||
        !fj.contains("obj_p") || !fj.contains("obj_q")) {
      throw ParseError(where + ": missing t, kp, obj_p or obj_q");
    }
    const auto& kp = fj["kp"];
    if (!kp.is_array() || kp.size() != 3 * kNumKeypoints) {
      throw ParseError(where + ": kp must hold exactly 63 numbers");
    }
    if (!fj["obj_p"].is_array() || fj["obj_p"].size() != 3 ||
        !fj["obj_q"].is_array() || fj["obj_q"].size() != 4) {
      throw ParseError(where + ": obj_p needs 3 and obj_q 4 numbers");
    }
    if (!fj["t"].is_number()) throw ParseError(where + ": t is not a number");
    DemoFrame f;
    f.t = fj["t"].get<double>();
    for (std::size_t s = 0; s < kp.size(); ++s) {
      const double v = number_at(kp, s, where, "keypoint scalar");
      if (!std::isfinite(v)) {
        throw ValidationError(where + ": keypoint " + std::to_string(s / 3) +
                              " is not finite");
      }
      f.keypoints(static_cast<int>(s % 3), static_cast<int>(s / 3)) = v;
    }
    for (std::size_t d = 0; d < 3; ++d) {
      f.object_pos[static_cast<int>(d)] = number_at(fj["obj_p"], d, where, "obj_p");
    }
    const auto& q = fj["obj_q"];
    f.object_quat = Quat(number_at(q, 0, where, "obj_q"), number_at(q, 1, where, "obj_q"),
                         number_at(q, 2, where, "obj_q"), number_at(q, 3, where, "obj_q"));
    traj.frames.push_back(f);
  }
  traj.validate();
  return traj;
}

std::string save_demo_string(const DemoTrajectory& traj) {
  return demo_to_json(traj).dump();
}

void save_demo(const DemoTrajectory& traj, const std::string& path) {
  write_file(path, save_demo_string(traj));
}

DemoTrajectory load_demo(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return demo_from_json(j);
}

DemoTrajectory resample(const DemoTrajectory& traj, double dt) {
  if (!(dt > 0.0)) throw UsageError("resample requires dt > 0");
  traj.validate();
  const double t0 = traj.frames.front().t;
  const double t1 = traj.frames.back().t;
  const double duration = t1 - t0;
  if (dt > duration) throw ValidationError("resample dt exceeds trajectory duration");
  const double snap = 1e-9 * dt;

  DemoTrajectory out;
  out.object_id = traj.object_id;
  out.subject_id = traj.subject_id;
  out.fps = 1.0 / dt;

  std::size_t seg = 0;
  auto frame_at = [&](double t) {
    while (seg + 1 < traj.frames.size() && traj.frames[seg + 1].t <= t + snap) ++seg;
    const DemoFrame& a = traj.frames[seg];
    if (std::abs(a.t - t) <= snap) return a;
    if (seg + 1 >= traj.frames.size()) return a;
    const DemoFrame& b = traj.frames[seg + 1];
    if (std::abs(b.t - t) <= snap) return b;
    const double w = (t - a.t) / (b.t - a.t);
    DemoFrame f;
    f.t = t;
    f.keypoints = (1.0 - w) * a.keypoints + w * b.keypoints;
    f.object_pos = (1.0 - w) * a.object_pos + w * b.object_pos;
    f.object_quat = a.object_quat.slerp(w, b.object_quat).normalized();
    return f;
  };

  const auto steps = static_cast<std::size_t>(std::floor(duration / dt + 1e-9));
  for (std::size_t i = 0; i <= steps; ++i) {
    const double t = t0 + static_cast<double>(i) * dt;
    if (t > t1 + snap) break;
    out.frames.push_back(frame_at(t));
  }
  if (std::abs(out.frames.back().t - t1) > snap) {
    out.frames.push_back(traj.frames.back());
  } else {
    out.frames.back() = traj.frames.back();
  }
  out.validate();
  return out;
}

std::string keypoints_csv(const DemoTrajectory& traj) {
  std::ostringstream os;
  os.precision(12);
  os << 't';
  for (int k = 0; k < kNumKeypoints; ++k) {
    os << ",kp" << k << "_x,kp" << k << "_y,kp" << k << "_z";
  }
  os << ",obj_x,obj_y,obj_z\n";
  for (const auto& f : traj.frames) {
    os << f.t;
    for (int k = 0; k < kNumKeypoints; ++k) {
      os << ',' << f.keypoints(0, k) << ',' << f.keypoints(1, k) << ','
         << f.keypoints(2, k);
    }
    os << ',' << f.object_pos.x() << ',' << f.object_pos.y() << ','
       << f.object_pos.z() << '\n';
  }
  return os.str();
}

namespace {

// Distances wrist->MCP and along each finger: rigid under any pose.
Eigen::Matrix<double, 20, 1> bone_signature(const Keypoints& kp) {
  Eigen::Matrix<double, 20, 1> sig;
  int s = 0;
  for (int f = 0; f < kNumFingers; ++f) {
    const int base = 1 + 4 * f;
    sig[s++] = (kp.col(base) - kp.col(kWristKeypoint)).norm();
    for (int b = 0; b < 3; ++b) sig[s++] = (kp.col(base + b + 1) - kp.col(base + b)).norm();
  }
  return sig;
}

}  // namespace

void validate_demo_set(const DemoSet& set, double tolerance) {
  const DemoTrajectory* reference = nullptr;
  Eigen::Matrix<double, 20, 1> ref_sig;
  for (const auto& [name, traj] : set) {
    traj.validate();
    const auto sig = bone_signature(traj.frames.front().keypoints);
    if (!reference) {
      reference = &traj;
      ref_sig = sig;
      continue;
    }
    if ((sig - ref_sig).cwiseAbs().maxCoeff() > tolerance) {
      throw ValidationError("demo '" + name +
                            "' uses a different keypoint convention or skeleton");
    }
  }
}

DemoKind demo_kind_from_string(const std::string& s) {
  if (s == "reach") return DemoKind::kReach;
  if (s == "lift") return DemoKind::kLift;
  if (s == "arc") return DemoKind::kArc;
  throw ConfigError("unknown demo kind: " + s);
}

const char* to_string(DemoKind kind) {
  switch (kind) {
    case DemoKind::kReach: return "reach";
    case DemoKind::kLift: return "lift";
    case DemoKind::kArc: return "arc";
  }
  return "?";
}

json demo_spec_to_json(const DemoSpec& s) {
  json j = {{"kind", to_string(s.kind)},
            {"object", s.object_id},
            {"subject", s.subject_id},
            {"duration", s.duration},
            {"fps", s.fps},
            {"object_start", to_json(s.object_start)},
            {"object_yaw", s.object_yaw},
            {"grasp_offset", to_json(s.grasp_offset)},
            {"close_start", s.close_start},
            {"close_end", s.close_end},
            {"settle_end", s.settle_end},
            {"closure_peak", s.closure_peak},
            {"closure_hold", s.closure_hold},
            {"move_start", s.move_start},
            {"move_end", s.move_end},
            {"lift_height", s.lift_height},
            {"arc_radius", s.arc_radius},
            {"arc_angle", s.arc_angle},
            {"reach_offset", to_json(s.reach_offset)}};
  if (s.open_posture.size() > 0) j["open_posture"] = to_json(s.open_posture);
  if (s.grasp_posture.size() > 0) j["grasp_posture"] = to_json(s.grasp_posture);
  return j;
}

DemoSpec demo_spec_from_json(const json& j) {
  DemoSpec s;
  try {
    s.kind = demo_kind_from_string(j.value("kind", std::string("lift")));
    s.object_id = j.value("object", s.object_id);
    s.subject_id = j.value("subject", s.subject_id);
    s.duration = j.value("duration", s.duration);
    s.fps = j.value("fps", s.fps);
    if (j.contains("object_start")) s.object_start = vec3_from_json(j["object_start"]);
    s.object_yaw = j.value("object_yaw", s.object_yaw);
    if (j.contains("grasp_offset")) s.grasp_offset = vec3_from_json(j["grasp_offset"]);
    s.close_start = j.value("close_start", s.close_start);
    s.close_end = j.value("close_end", s.close_end);
    s.settle_end = j.value("settle_end", s.settle_end);
    s.closure_peak = j.value("closure_peak", s.closure_peak);
    s.closure_hold = j.value("closure_hold", s.closure_hold);
    s.move_start = j.value("move_start", s.move_start);
    s.move_end = j.value("move_end", s.move_end);
    s.lift_height = j.value("lift_height", s.lift_height);
    s.arc_radius = j.value("arc_radius", s.arc_radius);
    s.arc_angle = j.value("arc_angle", s.arc_angle);
    if (j.contains("reach_offset")) s.reach_offset = vec3_from_json(j["reach_offset"]);
    if (j.contains("open_posture")) s.open_posture = vec_from_json(j["open_posture"]);
    if (j.contains("grasp_posture")) s.grasp_posture = vec_from_json(j["grasp_posture"]);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("demo spec: ") + e.what());
  }
  if (!(s.duration > 0.0 && s.fps > 0.0)) throw ConfigError("demo duration and fps must be > 0");
  if (!(s.close_start <= s.close_end && s.close_end <= s.settle_end)) {
    throw ConfigError("demo closure times must be ordered");
  }
  if (!(s.move_start < s.move_end)) throw ConfigError("demo move times must be ordered");
  return s;
}

double min_jerk(double s) {
  s = std::clamp(s, 0.0, 1.0);
  return s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
}

Vec3 arc_displacement(double radius, double angle) {
  return {radius * (1.0 - std::cos(angle)), 0.0, radius * std::sin(angle)};
}

namespace {

// Posture the fingers move toward when closing (thumb included).
Vec closed_posture(const HandModel& model) {
  Vec q = model.neutral_pose();
  auto set = [&](const std::string& name, double v) {
    if (auto i = model.find_joint(name)) q[*i] = v;
  };
  for (const char* f : {"index", "middle", "ring", "pinky"}) {
    const std::string n = f;
    set(n + "_mcp", 1.45);
    set(n + "_pip", 1.7);
    set(n + "_dip", 1.1);
  }
  set("thumb_cmc", 0.8);
  set("thumb_mcp", 0.9);
  set("thumb_ip", 0.9);
  return q;
}

double closure_at(const DemoSpec& s, double t) {
  if (t <= s.close_start) return 0.0;
  if (t <= s.close_end) {
    const double span = std::max(s.close_end - s.close_start, 1e-12);
    return s.closure_peak * min_jerk((t - s.close_start) / span);
  }
  if (t <= s.settle_end) {
    const double span = std::max(s.settle_end - s.close_end, 1e-12);
    return s.closure_peak +
           (s.closure_hold - s.closure_peak) * min_jerk((t - s.close_end) / span);
  }
  return s.closure_hold;
}

struct GraspPlacement {
  Vec3 base_pos;
  Vec3 base_rot;
  RigidObject object;
};

GraspPlacement place_grasp(const DemoSpec& spec, const RigidObject& object_template,
                           const SupportPlane& table, const Vec3& gravity) {
  GraspPlacement g;
  g.object = object_template;
  g.object.quat = Quat(Eigen::AngleAxisd(spec.object_yaw, Vec3::UnitZ()));
  g.object.pos = Vec3(spec.object_start.x(), spec.object_start.y(),
                      resting_height(object_template, table, gravity));
  g.object.lin_vel.setZero();
  g.object.ang_vel.setZero();
  const Mat3 yaw = g.object.quat.toRotationMatrix();
  g.base_rot = rotation_vector(g.object.quat);
  g.base_pos = g.object.pos - yaw * spec.grasp_offset;
  return g;
}

}  // namespace

Vec default_grasp_posture(const HandModel& model, const RigidObject& object,
                          const Vec3& grasp_offset, double target_depth) {
  DemoSpec spec;
  spec.grasp_offset = grasp_offset;
  SupportPlane table;
  const auto g = place_grasp(spec, object, table, Vec3(0, 0, -9.81));
  const double kTargetDepth = target_depth;
  const Vec open = model.neutral_pose();
  const Vec closed = closed_posture(model);
  Vec grasp = open;
  HandState st = HandState::at_rest(model);
  st.base_pos = g.base_pos;
  st.base_rot = g.base_rot;
  for (int c = 0; c < kNumFingers; ++c) {
    const auto joints = model.chain_joints(c);
    auto depth_at = [&](double s) {
      for (int j : joints) st.q[j] = open[j] + s * (closed[j] - open[j]);
      const auto kp = forward_kinematics(st, model);
      const Vec3 tip = kp.col(keypoint_index(static_cast<Finger>(c), Knuckle::kTip));
      return model.fingertip_radius - closest_surface_point(g.object, tip).distance;
    };
    double s_hit = 1.0;
    // Scan for the first contact, then bisect.
    constexpr int kScan = 200;
    double prev = 0.0;
    for (int k = 1; k <= kScan; ++k) {
      const double s = static_cast<double>(k) / kScan;
      if (depth_at(s) >= kTargetDepth) {
        double lo = prev, hi = s;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (depth_at(mid) >= kTargetDepth ? hi : lo) = mid;
        }
        s_hit = hi;
        break;
      }
      prev = s;
    }
    for (int j : joints) grasp[j] = open[j] + s_hit * (closed[j] - open[j]);
    for (int j : joints) st.q[j] = grasp[j];
  }
  return grasp;
}

DemoTrajectory synth_demo(const DemoSpec& spec, const HandModel& model,
                          const RigidObject& object, const SupportPlane& table,
                          const Vec3& gravity) {
  const auto g = place_grasp(spec, object, table, gravity);
  const Vec open = spec.open_posture.size() > 0 ? spec.open_posture : model.neutral_pose();
  const Vec grasp = spec.grasp_posture.size() > 0
                        ? spec.grasp_posture
                        : default_grasp_posture(model, object, spec.grasp_offset);
  if (open.size() != model.num_joints() || grasp.size() != model.num_joints()) {
    throw ConfigError("demo postures must have one entry per joint");
  }
  const Vec lo = model.lower_limits();
  const Vec hi = model.upper_limits();
  const Mat3 yaw = g.object.quat.toRotationMatrix();

  DemoTrajectory traj;
  traj.object_id = spec.object_id;
  traj.subject_id = spec.subject_id;
  traj.fps = spec.fps;
  const auto n = static_cast<int>(std::llround(spec.duration * spec.fps));
  HandState st = HandState::at_rest(model);
  st.base_rot = g.base_rot;
  // A reach approaches first and closes on arrival.
  const double approach = spec.move_end - spec.move_start;
  for (int i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / spec.fps;
    const bool reach = spec.kind == DemoKind::kReach;
    const double closure = closure_at(spec, reach ? t - approach : t);
    st.q = (open + closure * (grasp - open)).cwiseMax(lo).cwiseMin(hi);
    const double move = reach ? min_jerk(t / approach)
                              : min_jerk((t - spec.move_start) / approach);
    Vec3 hand_shift = Vec3::Zero();
    Vec3 object_shift = Vec3::Zero();
    switch (spec.kind) {
      case DemoKind::kReach:
        hand_shift = yaw * spec.reach_offset * (1.0 - move);
        break;
      case DemoKind::kLift:
        hand_shift = Vec3(0.0, 0.0, spec.lift_height * move);
        object_shift = hand_shift;
        break;
      case DemoKind::kArc:
        hand_shift = yaw * arc_displacement(spec.arc_radius, spec.arc_angle * move);
        object_shift = hand_shift;
        break;
    }
    st.base_pos = g.base_pos + hand_shift;
    DemoFrame f;
    f.t = t;
    f.keypoints = forward_kinematics(st, model);
    f.object_pos = g.object.pos + object_shift;
    f.object_quat = g.object.quat;
    traj.frames.push_back(f);
  }
  traj.validate();
  return traj;
}

}  // namespace exohand
