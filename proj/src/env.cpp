#include "exohand/env.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace exohand {

void RewardParams::validate() const {
  if (!(lambda1 > 0 && lambda2 > 0 && alpha1 > 0 && alpha2 > 0 && beta > 0)) {
    throw ConfigError("reward weights must be > 0");
  }
  for (double w : keypoint_weights) {
    if (!(w > 0.0)) throw ConfigError("keypoint weights must be > 0");
  }
  if (!(pos_tol > 0.0)) throw ConfigError("pos_tol must be > 0");
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "demo_only") return RewardMode::kDemoOnly;
  if (s == "demo_plus_obj") return RewardMode::kDemoPlusObj;
  throw ConfigError("unknown reward mode: " + s);
}

const char* to_string(RewardMode m) {
  return m == RewardMode::kDemoOnly ? "demo_only" : "demo_plus_obj";
}

void EnvConfig::validate() const {
  if (!(dt > 0.0 && dt <= 0.02)) throw ConfigError("dt must be in (0, 0.02]");
  if (substeps < 1) throw ConfigError("substeps must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (!(noise_std_frac >= 0.0)) throw ConfigError("noise_std_frac must be >= 0");
  if (pe_dim < 0 || pe_dim % 2 != 0) throw ConfigError("pe_dim must be even and >= 0");
  if (reset_perturbation < 0.0) throw ConfigError("reset_perturbation must be >= 0");
  reward.validate();
}

std::string ObsLayout::digest() const {
  json j = {{"phi", {{"offset", phi_offset()}, {"size", phi_size()}}},
            {"psi", {{"offset", psi_offset()}, {"size", psi_size()}}},
            {"tau", {{"offset", pe_offset()}, {"size", pe_dim}}},
            {"theta_hat", {{"offset", theta_offset()}, {"size", 3 * kNumKeypoints}}},
            {"order", "q,base_pos,base_rot,qd,base_lin,base_ang|obj_pos,obj_rotvec,"
                      "obj_vel|pe|kp_xyz"}};
  return sha256_hex(j.dump());
}

// --- reward primitives -------------------------------------------------------

Eigen::Matrix<double, 3, 6> select_reward_keypoints(const Keypoints& kp) {
  Eigen::Matrix<double, 3, 6> out;
  for (std::size_t k = 0; k < kRewardKeypoints.size(); ++k) {
    out.col(static_cast<int>(k)) = kp.col(kRewardKeypoints[k]);
  }
  return out;
}

namespace {

double weighted_distance(const Eigen::Matrix<double, 3, 6>& a,
                         const Eigen::Matrix<double, 3, 6>& b,
                         const RewardParams& params) {
  double num = 0.0;
  double den = 0.0;
  for (int k = 0; k < 6; ++k) {
    const double w = params.keypoint_weights[static_cast<std::size_t>(k)];
    num += w * (a.col(k) - b.col(k)).norm();
    den += w;
  }
  return num / den;
}

}  // namespace

double demo_error(const Keypoints& keypoints, const Keypoints& reference,
                  const RewardParams& params) {
  return weighted_distance(select_reward_keypoints(keypoints),
                           select_reward_keypoints(reference), params);
}

double reward_demo(const Eigen::Matrix<double, 3, 6>& keypoints,
                   const Eigen::Matrix<double, 3, 6>& reference,
                   const RewardParams& params) {
  return -params.lambda2 * params.alpha2 * weighted_distance(keypoints, reference, params);
}

double reward_obj(const Vec3& pos, const Quat& quat, const Vec3& ref_pos,
                  const Quat& ref_quat, const RewardParams& params) {
  const double dp = (pos - ref_pos).norm();
  const double dtheta = orientation_angle(quat, ref_quat);
  return params.lambda1 * std::exp(-params.alpha1 * dp - params.beta * dtheta);
}

Vec positional_encoding(double t, int d_pe) {
  if (d_pe < 0 || d_pe % 2 != 0) throw ConfigError("positional encoding size must be even");
  Vec pe(d_pe);
  for (int i = 0; i < d_pe / 2; ++i) {
    const double freq = std::pow(10000.0, 2.0 * i / d_pe);
    pe[2 * i] = std::sin(t / freq);
    pe[2 * i + 1] = std::cos(t / freq);
  }
  return pe;
}

// --- inverse kinematics --------------------------------------------------------

namespace {

Vec pack(const HandState& s) {
  const auto n = s.q.size();
  Vec x(n + 6);
  x.head<3>() = s.base_pos;
  x.segment<3>(3) = s.base_rot;
  x.tail(n) = s.q;
  return x;
}

void unpack(const Vec& x, HandState& s) {
  s.base_pos = x.head<3>();
  s.base_rot = x.segment<3>(3);
  s.q = x.tail(s.q.size());
}

Eigen::Matrix<double, 63, 1> keypoint_residual(const HandModel& model, HandState& s,
                                               const Vec& x, const Keypoints& target) {
  unpack(x, s);
  const Keypoints kp = forward_kinematics(s, model);
  Eigen::Matrix<double, 63, 1> r;
  Eigen::Map<Keypoints>(r.data()) = kp - target;
  return r;
}

double mean_keypoint_error(const Eigen::Matrix<double, 63, 1>& r) {
  double sum = 0.0;
  for (int k = 0; k < kNumKeypoints; ++k) sum += r.segment<3>(3 * k).norm();
  return sum / kNumKeypoints;
}

// Kabsch rotation that maps `from` points onto `to` points (centred).
Mat3 kabsch(const Eigen::Matrix<double, 3, 6>& from, const Eigen::Matrix<double, 3, 6>& to) {
  const Vec3 cf = from.rowwise().mean();
  const Vec3 ct = to.rowwise().mean();
  const Mat3 h = (from.colwise() - cf) * (to.colwise() - ct).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  return svd.matrixV() * d * svd.matrixU().transpose();
}

}  // namespace

IkResult fit_keypoints(const HandModel& model, const Keypoints& target,
                       int max_iterations) {
  HandState s = HandState::at_rest(model);
  s.q = model.neutral_pose();
  const Vec lo = model.lower_limits();
  const Vec hi = model.upper_limits();

  // Initial base orientation from the rigid palm points.
  {
    HandState rest = s;
    rest.q.setZero();
    const Keypoints kp0 = forward_kinematics(rest, model);
    Eigen::Matrix<double, 3, 6> from, to;
    from.col(0) = kp0.col(kWristKeypoint);
    to.col(0) = target.col(kWristKeypoint);
    for (int f = 0; f < kNumFingers; ++f) {
      const int idx = keypoint_index(static_cast<Finger>(f), Knuckle::kMcp);
      from.col(f + 1) = kp0.col(idx);
      to.col(f + 1) = target.col(idx);
    }
    s.base_rot = rotation_vector(Quat(kabsch(from, to)));
    s.base_pos = target.col(kWristKeypoint);
  }

  const int n = model.num_joints();
  const int p = n + 6;
  Vec x = pack(s);
  auto project = [&](Vec& v) { v.tail(n) = v.tail(n).cwiseMax(lo).cwiseMin(hi); };
  project(x);
  auto r = keypoint_residual(model, s, x, target);
  double cost = r.squaredNorm();
  double mu = 1e-3;
  Eigen::Matrix<double, 63, Eigen::Dynamic> jac(63, p);
  for (int it = 0; it < max_iterations && cost > 1e-24; ++it) {
    constexpr double kEps = 1e-7;
    for (int c = 0; c < p; ++c) {
      Vec xp = x, xm = x;
      xp[c] += kEps;
      xm[c] -= kEps;
      jac.col(c) = (keypoint_residual(model, s, xp, target) -
                    keypoint_residual(model, s, xm, target)) /
                   (2.0 * kEps);
    }
    const Mat jtj = jac.transpose() * jac;
    const Vec g = jac.transpose() * r;
    bool improved = false;
    for (int tries = 0; tries < 10; ++tries) {
      Mat a = jtj;
      a.diagonal().array() += mu * (1.0 + jtj.diagonal().array());
      Vec x_new = x - a.ldlt().solve(g);
      project(x_new);
      const auto r_new = keypoint_residual(model, s, x_new, target);
      const double c_new = r_new.squaredNorm();
      if (c_new < cost) {
        const double step = (x_new - x).norm();
        x = x_new;
        r = r_new;
        cost = c_new;
        mu = std::max(mu / 3.0, 1e-12);
        improved = true;
        if (step < 1e-12) it = max_iterations;
        break;
      }
      mu *= 4.0;
    }
    if (!improved) break;
  }
  unpack(x, s);
  return {s, mean_keypoint_error(keypoint_residual(model, s, x, target))};
}

// --- HandEnv --------------------------------------------------------------------

HandEnv::HandEnv(SceneConfig scene, EnvConfig cfg, const DemoTrajectory& demo)
    : HandEnv(scene, cfg, demo, WeaknessProfile::identity(scene.hand.num_muscles())) {}

HandEnv::HandEnv(SceneConfig scene, EnvConfig cfg, const DemoTrajectory& demo,
                 const WeaknessProfile& weakness)
    : scene_(std::move(scene)), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  scene_.hand.validate();
  scene_.object.validate();
  scene_.hand_contact.validate();
  scene_.table.params.validate();
  model_ = apply_weakness(scene_.hand, weakness);
  identity_ = WeaknessProfile::identity(model_.num_muscles());
  demo_ = resample(demo, cfg_.dt);
  layout_ = ObsLayout{model_.num_joints(), cfg_.pe_dim};

  const int n = model_.num_joints();
  // Extent of the desk workspace, m.
  constexpr double kPositionRange = 0.2;
  noise_range_.resize(layout_.phi_size() + layout_.psi_size());
  int o = 0;
  for (int i = 0; i < n; ++i) {
    const auto& j = model_.joints[static_cast<std::size_t>(i)];
    noise_range_[o++] = j.hi - j.lo;
  }
  for (int i = 0; i < 3; ++i) noise_range_[o++] = kPositionRange;
  for (int i = 0; i < 3; ++i) noise_range_[o++] = std::numbers::pi;
  for (int i = 0; i < n; ++i) noise_range_[o++] = 10.0;
  for (int i = 0; i < 3; ++i) noise_range_[o++] = 1.0;
  for (int i = 0; i < 3; ++i) noise_range_[o++] = 4.0;
  for (int i = 0; i < 3; ++i) noise_range_[o++] = kPositionRange;
  for (int i = 0; i < 3; ++i) noise_range_[o++] = std::numbers::pi;
  for (int i = 0; i < 3; ++i) noise_range_[o++] = 2.0;

  const IkResult ik = fit_keypoints(model_, demo_.frames.front().keypoints);
  ik_residual_ = ik.mean_error;
  if (ik.mean_error > cfg_.ik_tolerance) {
    throw ConfigError("hand model cannot represent the first demo pose (mean "
                      "keypoint residual " + std::to_string(ik.mean_error) + " m)");
  }
  fitted_start_ = ik.state;
  fitted_start_.qd.setZero();
  fitted_start_.a.setZero();
  external_ = Vec::Zero(n);
  state_ = fitted_start_;
  object_ = scene_.object;
}

const DemoFrame& HandEnv::reference(int step) const {
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(std::max(step, 0)),
                                         demo_.frames.size() - 1);
  return demo_.frames[idx];
}

Vec HandEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  state_ = fitted_start_;
  const Vec lo = model_.lower_limits();
  const Vec hi = model_.upper_limits();
  for (int i = 0; i < model_.num_joints(); ++i) {
    const double d = rng_.uniform(-cfg_.reset_perturbation, cfg_.reset_perturbation);
    state_.q[i] = std::clamp(state_.q[i] + d, lo[i], hi[i]);
  }
  state_.qd.setZero();
  state_.a.setZero();
  state_.base_lin_vel.setZero();
  state_.base_ang_vel.setZero();
  const DemoFrame& f0 = reference(0);
  object_ = scene_.object;
  object_.pos = f0.object_pos;
  object_.quat = f0.object_quat;
  object_.lin_vel.setZero();
  object_.ang_vel.setZero();
  step_ = 0;
  done_ = false;
  last_contacts_.clear();
  return observe();
}

void HandEnv::set_external_torques(const Vec& tau) {
  if (tau.size() != model_.num_joints()) {
    throw ConfigError("external torque size does not match joint count");
  }
  external_ = tau;
}

void HandEnv::clear_external_torques() { external_.setZero(); }

void HandEnv::physics_substep(const Vec& excitation, double h) {
  state_.a = activation_step(state_.a, excitation, model_, h);
  const Vec tau = muscle_torques(state_.a, model_, identity_);
  const Kinematics kin = compute_kinematics(state_, model_);

  std::array<Sphere, kNumFingers + 1> spheres;
  int count = 0;
  for (int f = 0; f < kNumFingers; ++f) {
    Sphere s;
    s.center = kin.fingertip(static_cast<Finger>(f));
    s.radius = model_.fingertip_radius;
    s.velocity = point_velocity(kin, state_, model_, f, s.center);
    s.site = f;
    spheres[static_cast<std::size_t>(count++)] = s;
  }
  if (scene_.palm_contact && model_.palm_sphere_radius > 0.0) {
    Sphere s;
    s.center = kin.palm_sphere_center;
    s.radius = model_.palm_sphere_radius;
    s.velocity = point_velocity(kin, state_, model_, -1, s.center);
    s.site = kNumFingers;
    spheres[static_cast<std::size_t>(count++)] = s;
  }
  const auto contacts =
      detect_contacts(std::span<const Sphere>(spheres.data(), static_cast<std::size_t>(count)),
                      object_);
  last_contacts_ = contact_forces(contacts, scene_.hand_contact);

  Vec tau_ext = external_;
  std::vector<AppliedForce> applied;
  applied.reserve(last_contacts_.size() + 16);
  for (const auto& f : last_contacts_) {
    const int chain = f.site < kNumFingers ? f.site : -1;
    accumulate_point_force(kin, model_, chain, f.position, -f.on_object, tau_ext);
    applied.push_back({f.position, f.on_object});
  }
  const auto plane_contacts = detect_plane_contacts(object_, scene_.table);
  for (const auto& f : contact_forces(plane_contacts, scene_.table.params)) {
    applied.push_back({f.position, f.on_object});
  }
  state_ = dynamics_step(state_, model_, tau, tau_ext, h);
  object_ = object_step(object_, applied, scene_.gravity, h);
}

StepResult HandEnv::step(const Vec& action) {
  if (done_) throw UsageError("step() called on a finished episode; call reset()");
  const int m = model_.num_muscles();
  if (action.size() != action_dim()) {
    throw UsageError("action has " + std::to_string(action.size()) + " entries, expected " +
                     std::to_string(action_dim()));
  }
  if (!action.allFinite()) throw StepError("non-finite action");
  const Vec excitation = action.head(m).cwiseMax(0.0).cwiseMin(1.0);
  const Vec base = action.tail(kBaseDofs).cwiseMax(-1.0).cwiseMin(1.0);
  state_.base_lin_vel = cfg_.max_lin_rate * base.head<3>();
  state_.base_ang_vel = cfg_.max_ang_rate * base.tail<3>();

  const double h = cfg_.dt / cfg_.substeps;
  for (int s = 0; s < cfg_.substeps; ++s) physics_substep(excitation, h);
  ++step_;

  StepResult res;
  const DemoFrame& ref = reference(step_);
  const Keypoints kp = forward_kinematics(state_, model_);
  const auto sel = select_reward_keypoints(kp);
  const auto ref_sel = select_reward_keypoints(ref.keypoints);
  res.info.demo_err = weighted_distance(sel, ref_sel, cfg_.reward);
  res.info.r_demo = reward_demo(sel, ref_sel, cfg_.reward);
  res.info.obj_pos_err = (object_.pos - ref.object_pos).norm();
  res.info.obj_ang_err = orientation_angle(object_.quat, ref.object_quat);
  res.info.r_obj = reward_obj(object_.pos, object_.quat, ref.object_pos, ref.object_quat,
                              cfg_.reward);
  res.info.success_step = res.info.obj_pos_err <= cfg_.reward.pos_tol;
  res.reward = cfg_.reward_mode == RewardMode::kDemoOnly ? res.info.r_demo
                                                          : res.info.r_demo + res.info.r_obj;
  done_ = step_ >= cfg_.horizon || res.info.obj_pos_err > cfg_.runaway_error;
  res.done = done_;
  res.obs = observe();
  return res;
}

Vec HandEnv::clean_observation() const {
  Vec obs(layout_.size());
  const int n = model_.num_joints();
  int o = 0;
  obs.segment(o, n) = state_.q;
  o += n;
  obs.segment<3>(o) = state_.base_pos;
  obs.segment<3>(o + 3) = state_.base_rot;
  o += 6;
  obs.segment(o, n) = state_.qd;
  o += n;
  obs.segment<3>(o) = state_.base_lin_vel;
  obs.segment<3>(o + 3) = state_.base_ang_vel;
  o += 6;
  obs.segment<3>(o) = object_.pos;
  obs.segment<3>(o + 3) = rotation_vector(object_.quat);
  obs.segment<3>(o + 6) = object_.lin_vel;
  o += 9;
  obs.segment(o, layout_.pe_dim) = positional_encoding(step_, layout_.pe_dim);
  o += layout_.pe_dim;
  obs.segment<3 * kNumKeypoints>(o) =
      Eigen::Map<const Eigen::Matrix<double, 3 * kNumKeypoints, 1>>(
          reference(step_).keypoints.data());
  return obs;
}

Vec HandEnv::observe() {
  Vec obs = clean_observation();
  if (cfg_.noise_std_frac > 0.0) {
    for (Eigen::Index i = 0; i < noise_range_.size(); ++i) {
      obs[i] += cfg_.noise_std_frac * noise_range_[i] * rng_.normal();
    }
  }
  return obs;
}

json HandEnv::save_state() const {
  return {{"hand", hand_state_to_json(state_)},
          {"object", object_to_json(object_)},
          {"external", to_json(external_)},
          {"step", step_},
          {"done", done_},
          {"rng", rng_.state()}};
}

void HandEnv::load_state(const json& j) {
  state_ = hand_state_from_json(j.at("hand"));
  object_ = object_from_json(j.at("object"));
  external_ = vec_from_json(j.at("external"));
  step_ = j.at("step").get<int>();
  done_ = j.at("done").get<bool>();
  rng_.set_state(j.at("rng").get<std::string>());
}

// --- serialization ------------------------------------------------------------

json hand_state_to_json(const HandState& s) {
  return {{"q", to_json(s.q)},
          {"qd", to_json(s.qd)},
          {"a", to_json(s.a)},
          {"base_pos", to_json(s.base_pos)},
          {"base_rot", to_json(s.base_rot)},
          {"base_lin_vel", to_json(s.base_lin_vel)},
          {"base_ang_vel", to_json(s.base_ang_vel)}};
}

HandState hand_state_from_json(const json& j) {
  HandState s;
  s.q = vec_from_json(j.at("q"));
  s.qd = vec_from_json(j.at("qd"));
  s.a = vec_from_json(j.at("a"));
  s.base_pos = vec3_from_json(j.at("base_pos"));
  s.base_rot = vec3_from_json(j.at("base_rot"));
  s.base_lin_vel = vec3_from_json(j.at("base_lin_vel"));
  s.base_ang_vel = vec3_from_json(j.at("base_ang_vel"));
  return s;
}

json reward_params_to_json(const RewardParams& p) {
  return {{"lambda1", p.lambda1}, {"lambda2", p.lambda2},
          {"alpha1", p.alpha1},   {"alpha2", p.alpha2},
          {"beta", p.beta},       {"keypoint_weights", p.keypoint_weights},
          {"pos_tol", p.pos_tol}};
}

RewardParams reward_params_from_json(const json& j) {
  RewardParams p;
  p.lambda1 = j.value("lambda1", p.lambda1);
  p.lambda2 = j.value("lambda2", p.lambda2);
  p.alpha1 = j.value("alpha1", p.alpha1);
  p.alpha2 = j.value("alpha2", p.alpha2);
  p.beta = j.value("beta", p.beta);
  if (j.contains("keypoint_weights")) {
    const auto& w = j["keypoint_weights"];
    if (!w.is_array() || w.size() != 6) {
      throw ConfigError("keypoint_weights needs 6 entries (wrist, thumb..pinky tips)");
    }
    for (std::size_t k = 0; k < 6; ++k) p.keypoint_weights[k] = w[k].get<double>();
  }
  p.pos_tol = j.value("pos_tol", p.pos_tol);
  p.validate();
  return p;
}

json env_config_to_json(const EnvConfig& c) {
  return {{"dt", c.dt},
          {"substeps", c.substeps},
          {"horizon", c.horizon},
          {"noise_std_frac", c.noise_std_frac},
          {"reward", reward_params_to_json(c.reward)},
          {"reward_mode", to_string(c.reward_mode)},
          {"seed", c.seed},
          {"pe_dim", c.pe_dim},
          {"reset_perturbation", c.reset_perturbation},
          {"max_lin_rate", c.max_lin_rate},
          {"max_ang_rate", c.max_ang_rate},
          {"runaway_error", c.runaway_error},
          {"ik_tolerance", c.ik_tolerance}};
}

EnvConfig env_config_from_json(const json& j) {
  EnvConfig c;
  try {
    c.dt = j.value("dt", c.dt);
    c.substeps = j.value("substeps", c.substeps);
    c.horizon = j.value("horizon", c.horizon);
    c.noise_std_frac = j.value("noise_std_frac", c.noise_std_frac);
    if (j.contains("reward")) c.reward = reward_params_from_json(j["reward"]);
    if (j.contains("reward_mode")) {
      c.reward_mode = reward_mode_from_string(j["reward_mode"].get<std::string>());
    }
    c.seed = j.value("seed", c.seed);
    c.pe_dim = j.value("pe_dim", c.pe_dim);
    c.reset_perturbation = j.value("reset_perturbation", c.reset_perturbation);
    c.max_lin_rate = j.value("max_lin_rate", c.max_lin_rate);
    c.max_ang_rate = j.value("max_ang_rate", c.max_ang_rate);
    c.runaway_error = j.value("runaway_error", c.runaway_error);
    c.ik_tolerance = j.value("ik_tolerance", c.ik_tolerance);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("env config: ") + e.what());
  }
  c.validate();
  return c;
}

json scene_to_json(const SceneConfig& s) {
  return {{"hand", hand_model_to_json(s.hand)},
          {"object", object_to_json(s.object)},
          {"hand_contact", contact_params_to_json(s.hand_contact)},
          {"table",
           {{"height", s.table.height},
            {"enabled", s.table.enabled},
            {"contact", contact_params_to_json(s.table.params)}}},
          {"gravity", to_json(s.gravity)},
          {"palm_contact", s.palm_contact}};
}

SceneConfig scene_from_json(const json& j) {
  SceneConfig s;
  try {
    if (j.contains("hand")) {
      const auto& h = j["hand"];
      if (h.is_string()) {
        if (h.get<std::string>() != "desk") {
          throw ConfigError("unknown hand preset: " + h.get<std::string>());
        }
      } else {
        s.hand = hand_model_from_json(h);
      }
    }
    if (j.contains("object")) {
      const auto& o = j["object"];
      s.object = o.is_string() ? ycb_object(o.get<std::string>()) : object_from_json(o);
    }
    if (j.contains("hand_contact")) s.hand_contact = contact_params_from_json(j["hand_contact"]);
    if (j.contains("table")) {
      const auto& t = j["table"];
      s.table.height = t.value("height", s.table.height);
      s.table.enabled = t.value("enabled", s.table.enabled);
      if (t.contains("contact")) s.table.params = contact_params_from_json(t["contact"]);
    }
    if (j.contains("gravity")) s.gravity = vec3_from_json(j["gravity"]);
    s.palm_contact = j.value("palm_contact", s.palm_contact);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene config: ") + e.what());
  }
  return s;
}

}  // namespace exohand
