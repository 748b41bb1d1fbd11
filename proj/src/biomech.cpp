#include "exohand/biomech.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace exohand {

const char* finger_name(Finger f) {
  switch (f) {
    case Finger::kThumb: return "thumb";
    case Finger::kIndex: return "index";
    case Finger::kMiddle: return "middle";
    case Finger::kRing: return "ring";
    case Finger::kPinky: return "pinky";
  }
  return "?";
}

int HandModel::joint_index(const std::string& name) const {
  if (auto i = find_joint(name)) return *i;
  throw ConfigError("unknown joint: " + name);
}

std::optional<int> HandModel::find_joint(const std::string& name) const {
  for (int i = 0; i < num_joints(); ++i) {
    if (joints[static_cast<std::size_t>(i)].name == name) return i;
  }
  return std::nullopt;
}

std::vector<int> HandModel::chain_joints(int chain) const {
  std::vector<int> out;
  for (int i = 0; i < num_joints(); ++i) {
    if (joints[static_cast<std::size_t>(i)].chain == chain) out.push_back(i);
  }
  return out;
}

Mat HandModel::moment_arm_matrix() const {
  Mat r(num_joints(), num_muscles());
  for (int m = 0; m < num_muscles(); ++m) {
    r.col(m) = muscles[static_cast<std::size_t>(m)].moment_arms;
  }
  return r;
}

Vec HandModel::lower_limits() const {
  Vec v(num_joints());
  for (int i = 0; i < num_joints(); ++i) v[i] = joints[static_cast<std::size_t>(i)].lo;
  return v;
}

Vec HandModel::upper_limits() const {
  Vec v(num_joints());
  for (int i = 0; i < num_joints(); ++i) v[i] = joints[static_cast<std::size_t>(i)].hi;
  return v;
}

Vec HandModel::neutral_pose() const {
  Vec v(num_joints());
  for (int i = 0; i < num_joints(); ++i) {
    v[i] = joints[static_cast<std::size_t>(i)].neutral;
  }
  return v;
}

void HandModel::validate() const {
  if (joints.empty()) throw ConfigError("hand model has no joints");
  int last_chain = -1;
  for (const auto& j : joints) {
    if (!(j.lo < j.hi)) throw ConfigError("joint limits not ordered: " + j.name);
    if (j.chain < -1 || j.chain >= kNumFingers) {
      throw ConfigError("joint chain out of range: " + j.name);
    }
    if (j.chain < last_chain) {
      throw ConfigError("joints must be grouped wrist first, then chains in order");
    }
    last_chain = j.chain;
    if (!(j.inertia > 0.0)) throw ConfigError("inertia must be > 0: " + j.name);
    if (j.damping < 0.0 || j.stiffness < 0.0) {
      throw ConfigError("damping and stiffness must be >= 0: " + j.name);
    }
    if (j.bone < 0.0) throw ConfigError("bone length must be >= 0: " + j.name);
    if (j.chain == -1 && j.bone != 0.0) {
      throw ConfigError("wrist joints carry no bone: " + j.name);
    }
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw ConfigError("joint axis must be unit length: " + j.name);
    }
  }
  for (int c = 0; c < kNumFingers; ++c) {
    const auto idx = chain_joints(c);
    int bones = 0;
    for (int i : idx) bones += joints[static_cast<std::size_t>(i)].bone > 0.0 ? 1 : 0;
    if (bones != 3) {
      throw ConfigError("finger chain needs exactly three bones: " +
                        chains[static_cast<std::size_t>(c)].name);
    }
    if (joints[static_cast<std::size_t>(idx.back())].bone <= 0.0) {
      throw ConfigError("last joint of a chain must carry the distal bone: " +
                        chains[static_cast<std::size_t>(c)].name);
    }
  }
  if (muscles.empty()) throw ConfigError("hand model has no muscles");
  for (const auto& m : muscles) {
    if (!(m.f_max > 0.0)) throw ConfigError("f_max must be > 0: " + m.name);
    if (!(m.tau_act > 0.0) || !(m.tau_deact > 0.0)) {
      throw ConfigError("activation time constants must be > 0: " + m.name);
    }
    if (m.moment_arms.size() != num_joints()) {
      throw ConfigError("moment-arm row length must equal joint count: " + m.name);
    }
    if ((m.moment_arms.array() == 0.0).all()) {
      throw ConfigError("muscle has no nonzero moment arm: " + m.name);
    }
  }
  if (!(fingertip_radius > 0.0)) throw ConfigError("fingertip radius must be > 0");
  if (palm_sphere_radius < 0.0) throw ConfigError("palm sphere radius must be >= 0");
}

HandState HandState::at_rest(const HandModel& model) {
  HandState s;
  s.q = Vec::Zero(model.num_joints());
  s.qd = Vec::Zero(model.num_joints());
  s.a = Vec::Zero(model.num_muscles());
  return s;
}

WeaknessProfile WeaknessProfile::identity(int num_muscles) {
  return {Vec::Ones(num_muscles)};
}

WeaknessProfile WeaknessProfile::uniform(int num_muscles, double s) {
  WeaknessProfile p{Vec::Constant(num_muscles, s)};
  p.validate(num_muscles);
  return p;
}

WeaknessProfile WeaknessProfile::by_group(
    const HandModel& model, const std::map<std::string, double>& groups) {
  WeaknessProfile p = identity(model.num_muscles());
  for (int m = 0; m < model.num_muscles(); ++m) {
    const auto it = groups.find(model.muscles[static_cast<std::size_t>(m)].group);
    if (it != groups.end()) p.scale[m] = it->second;
  }
  p.validate(model.num_muscles());
  return p;
}

void WeaknessProfile::validate(int num_muscles) const {
  if (scale.size() != num_muscles) {
    throw ValidationError("weakness profile length " + std::to_string(scale.size()) +
                          " != muscle count " + std::to_string(num_muscles));
  }
  for (Eigen::Index i = 0; i < scale.size(); ++i) {
    if (!(scale[i] > 0.0 && scale[i] <= 1.0)) {
      throw ValidationError("weakness factor outside (0, 1] at muscle " +
                            std::to_string(i));
    }
  }
}

Vec activation_step(const Vec& a, const Vec& u, const HandModel& model,
                    double dt) {
  const int m_count = model.num_muscles();
  if (a.size() != m_count || u.size() != m_count) {
    throw ConfigError("activation/excitation size does not match muscle count");
  }
  if (!(dt > 0.0)) throw UsageError("activation_step requires dt > 0");
  Vec out(m_count);
  for (int m = 0; m < m_count; ++m) {
    const auto& mu = model.muscles[static_cast<std::size_t>(m)];
    const double ui = std::clamp(u[m], 0.0, 1.0);
    const double tau = ui >= a[m] ? mu.tau_act : mu.tau_deact;
    out[m] = std::clamp(a[m] + dt * (ui - a[m]) / tau, 0.0, 1.0);
  }
  return out;
}

Vec muscle_torques(const Vec& a, const HandModel& model,
                   const WeaknessProfile& weakness) {
  const int m_count = model.num_muscles();
  if (a.size() != m_count || weakness.scale.size() != m_count) {
    throw ConfigError("activation/weakness size does not match muscle count");
  }
  Vec tau = Vec::Zero(model.num_joints());
  for (int m = 0; m < m_count; ++m) {
    const auto& mu = model.muscles[static_cast<std::size_t>(m)];
    const double force = a[m] * mu.f_max * weakness.scale[m];
    if (force != 0.0) tau += force * mu.moment_arms;
  }
  return tau;
}

HandState dynamics_step(const HandState& state, const HandModel& model,
                        const Vec& joint_torques, const Vec& external_torques,
                        double dt) {
  const int n = model.num_joints();
  if (joint_torques.size() != n || external_torques.size() != n) {
    throw ConfigError("torque vector size does not match joint count");
  }
  if (!(dt > 0.0 && dt <= 0.02)) throw UsageError("dynamics_step requires dt in (0, 0.02]");
  if (!joint_torques.allFinite() || !external_torques.allFinite()) {
    throw StepError("non-finite torque input");
  }
  HandState next = state;
  for (int i = 0; i < n; ++i) {
    const auto& j = model.joints[static_cast<std::size_t>(i)];
    const double q = state.q[i];
    const double qd = state.qd[i];
    double tau = joint_torques[i] + external_torques[i] - j.damping * qd -
                 j.stiffness * (q - j.neutral);
    const double soft_hi = j.hi - model.limit_margin;
    const double soft_lo = j.lo + model.limit_margin;
    if (q > soft_hi) tau -= model.limit_stiffness * (q - soft_hi);
    if (q < soft_lo) tau += model.limit_stiffness * (soft_lo - q);
    double v = qd + dt * tau / j.inertia;
    double x = q + dt * v;
    if (x > j.hi) {
      x = j.hi;
      v = std::min(v, 0.0);
    } else if (x < j.lo) {
      x = j.lo;
      v = std::max(v, 0.0);
    }
    next.q[i] = x;
    next.qd[i] = v;
  }
  next.base_pos = state.base_pos + dt * state.base_lin_vel;
  if (state.base_ang_vel.squaredNorm() > 0.0) {
    const Quat rot = quat_from_rotation_vector(dt * state.base_ang_vel) *
                     quat_from_rotation_vector(state.base_rot);
    next.base_rot = rotation_vector(rot);
  }
  if (!next.qd.allFinite() || !next.q.allFinite()) {
    throw StepError("non-finite joint state after step");
  }
  return next;
}

HandModel apply_weakness(const HandModel& model,
                         const WeaknessProfile& profile) {
  profile.validate(model.num_muscles());
  HandModel out = model;
  for (int m = 0; m < model.num_muscles(); ++m) {
    out.muscles[static_cast<std::size_t>(m)].f_max *= profile.scale[m];
  }
  return out;
}

Kinematics compute_kinematics(const HandState& state, const HandModel& model) {
  Kinematics kin;
  const int n = model.num_joints();
  kin.joint_axis.resize(static_cast<std::size_t>(n));
  kin.joint_origin.resize(static_cast<std::size_t>(n));
  kin.base_rotation = quat_from_rotation_vector(state.base_rot).toRotationMatrix();
  const Vec3 wrist = state.base_pos;
  kin.keypoints.col(kWristKeypoint) = wrist;

  Mat3 rot = kin.base_rotation;
  int i = 0;
  for (; i < n && model.joints[static_cast<std::size_t>(i)].chain == -1; ++i) {
    const auto& j = model.joints[static_cast<std::size_t>(i)];
    kin.joint_axis[static_cast<std::size_t>(i)] = rot * j.axis;
    kin.joint_origin[static_cast<std::size_t>(i)] = wrist;
    rot = rot * Eigen::AngleAxisd(state.q[i], j.axis).toRotationMatrix();
  }
  kin.palm_rotation = rot;
  kin.palm_sphere_center = wrist + rot * model.palm_sphere_center;

  for (int c = 0; c < kNumFingers; ++c) {
    const auto& chain = model.chains[static_cast<std::size_t>(c)];
    Vec3 p = wrist + kin.palm_rotation * chain.origin;
    Mat3 r = kin.palm_rotation * chain.frame;
    int slot = 1 + 4 * c;
    kin.keypoints.col(slot++) = p;
    for (; i < n && model.joints[static_cast<std::size_t>(i)].chain == c; ++i) {
      const auto& j = model.joints[static_cast<std::size_t>(i)];
      kin.joint_axis[static_cast<std::size_t>(i)] = r * j.axis;
      kin.joint_origin[static_cast<std::size_t>(i)] = p;
      r = r * Eigen::AngleAxisd(state.q[i], j.axis).toRotationMatrix();
      if (j.bone > 0.0) {
        p += j.bone * r.col(0);
        kin.keypoints.col(slot++) = p;
      }
    }
  }
  return kin;
}

Keypoints forward_kinematics(const HandState& state, const HandModel& model) {
  return compute_kinematics(state, model).keypoints;
}

std::vector<int> supporting_joints(const HandModel& model, int chain) {
  std::vector<int> out = model.chain_joints(-1);
  if (chain >= 0) {
    const auto c = model.chain_joints(chain);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_supporting_joint(const HandModel& model, int chain, Fn&& fn) {
  for (int i = 0; i < model.num_joints(); ++i) {
    const int c = model.joints[static_cast<std::size_t>(i)].chain;
    if (c == -1 || c == chain) fn(i);
  }
}

}  // namespace

Vec3 point_velocity(const Kinematics& kin, const HandState& state,
                    const HandModel& model, int chain, const Vec3& point) {
  Vec3 v = state.base_lin_vel + state.base_ang_vel.cross(point - state.base_pos);
  for_each_supporting_joint(model, chain, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    v += state.qd[i] * kin.joint_axis[k].cross(point - kin.joint_origin[k]);
  });
  return v;
}

void accumulate_point_force(const Kinematics& kin, const HandModel& model,
                            int chain, const Vec3& point, const Vec3& force,
                            Vec& joint_torques) {
  for_each_supporting_joint(model, chain, [&](int i) {
    const auto k = static_cast<std::size_t>(i);
    joint_torques[i] += kin.joint_axis[k].cross(point - kin.joint_origin[k]).dot(force);
  });
}

// --- serialization --------------------------------------------------------

namespace {

json mat3_to_json(const Mat3& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

Mat3 mat3_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected 3x3 matrix");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    const auto row = vec3_from_json(j[static_cast<std::size_t>(r)]);
    m.row(r) = row.transpose();
  }
  return m;
}

}  // namespace

json hand_model_to_json(const HandModel& model) {
  json j;
  j["schema"] = 1;
  j["fingertip_radius"] = model.fingertip_radius;
  j["palm_sphere"] = {{"center", to_json(model.palm_sphere_center)},
                      {"radius", model.palm_sphere_radius}};
  j["limit_stiffness"] = model.limit_stiffness;
  j["limit_margin"] = model.limit_margin;
  json chains = json::array();
  for (const auto& c : model.chains) {
    chains.push_back({{"name", c.name}, {"origin", to_json(c.origin)},
                      {"frame", mat3_to_json(c.frame)}});
  }
  j["segments"] = {{"chains", chains}};
  json joints = json::array();
  for (const auto& jt : model.joints) {
    joints.push_back({{"name", jt.name},
                      {"segment", jt.segment},
                      {"chain", jt.chain},
                      {"axis", to_json(jt.axis)},
                      {"lo", jt.lo},
                      {"hi", jt.hi},
                      {"inertia", jt.inertia},
                      {"damping", jt.damping},
                      {"stiffness", jt.stiffness},
                      {"neutral", jt.neutral},
                      {"bone", jt.bone}});
  }
  j["joints"] = joints;
  json muscles = json::array();
  for (const auto& m : model.muscles) {
    json arms = json::object();
    for (int i = 0; i < model.num_joints(); ++i) {
      if (m.moment_arms[i] != 0.0) {
        arms[model.joints[static_cast<std::size_t>(i)].name] = m.moment_arms[i];
      }
    }
    muscles.push_back({{"name", m.name},
                       {"group", m.group},
                       {"f_max", m.f_max},
                       {"tau_act", m.tau_act},
                       {"tau_deact", m.tau_deact},
                       {"moment_arms", arms}});
  }
  j["muscles"] = muscles;
  return j;
}

HandModel hand_model_from_json(const json& j) {
  try {
    HandModel model;
    model.fingertip_radius = j.at("fingertip_radius").get<double>();
    if (j.contains("palm_sphere")) {
      model.palm_sphere_center = vec3_from_json(j["palm_sphere"].at("center"));
      model.palm_sphere_radius = j["palm_sphere"].at("radius").get<double>();
    }
    model.limit_stiffness = j.value("limit_stiffness", model.limit_stiffness);
    model.limit_margin = j.value("limit_margin", model.limit_margin);
    const auto& chains = j.at("segments").at("chains");
    if (chains.size() != kNumFingers) throw ConfigError("expected five finger chains");
    for (std::size_t c = 0; c < kNumFingers; ++c) {
      model.chains[c].name = chains[c].at("name").get<std::string>();
      model.chains[c].origin = vec3_from_json(chains[c].at("origin"));
      model.chains[c].frame = mat3_from_json(chains[c].at("frame"));
    }
    for (const auto& jj : j.at("joints")) {
      Joint jt;
      jt.name = jj.at("name").get<std::string>();
      jt.segment = jj.value("segment", std::string());
      jt.chain = jj.at("chain").get<int>();
      jt.axis = vec3_from_json(jj.at("axis"));
      jt.lo = jj.at("lo").get<double>();
      jt.hi = jj.at("hi").get<double>();
      jt.inertia = jj.at("inertia").get<double>();
      jt.damping = jj.at("damping").get<double>();
      jt.stiffness = jj.value("stiffness", 0.0);
      jt.neutral = jj.value("neutral", 0.0);
      jt.bone = jj.value("bone", 0.0);
      model.joints.push_back(jt);
    }
    for (const auto& mj : j.at("muscles")) {
      Muscle m;
      m.name = mj.at("name").get<std::string>();
      m.group = mj.value("group", std::string());
      m.f_max = mj.at("f_max").get<double>();
      m.tau_act = mj.value("tau_act", m.tau_act);
      m.tau_deact = mj.value("tau_deact", m.tau_deact);
      m.moment_arms = Vec::Zero(model.num_joints());
      for (const auto& [joint, arm] : mj.at("moment_arms").items()) {
        m.moment_arms[model.joint_index(joint)] = arm.get<double>();
      }
      model.muscles.push_back(m);
    }
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("hand model JSON: ") + e.what());
  }
}

std::string keypoints_to_csv(const Keypoints& kp) {
  std::ostringstream os;
  os.precision(17);
  os << "x,y,z\n";
  for (int k = 0; k < kNumKeypoints; ++k) {
    os << kp(0, k) << ',' << kp(1, k) << ',' << kp(2, k) << '\n';
  }
  return os.str();
}

Keypoints keypoints_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);  // header
  Keypoints kp;
  int k = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (k >= kNumKeypoints) throw ParseError("keypoint CSV has more than 21 rows");
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    if (!(ls >> kp(0, k) >> kp(1, k) >> kp(2, k))) {
      throw ParseError("malformed keypoint CSV row " + std::to_string(k));
    }
    ++k;
  }
  if (k != kNumKeypoints) throw ParseError("keypoint CSV needs 21 rows");
  return kp;
}

}  // namespace exohand
