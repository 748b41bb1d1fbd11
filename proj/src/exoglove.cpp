#include "exohand/exoglove.hpp"

#include <algorithm>

namespace exohand {

GloveModel GloveModel::for_hand(const HandModel& hand) {
  GloveModel g;
  for (const char* name : {"index_mcp", "index_pip", "middle_mcp", "middle_pip"}) {
    g.finger_joints.push_back(hand.joint_index(name));
  }
  g.thumb_joint = hand.joint_index("thumb_cmc");
  g.mask = Vec::Zero(hand.num_joints());
  for (int j : g.finger_joints) g.mask[j] = 1.0;
  g.mask[g.thumb_joint] = 1.0;
  return g;
}

void GloveModel::validate(const HandModel& hand) const {
  if (!(flex_force > 0 && ext_force > 0 && thumb_torque > 0)) {
    throw ConfigError("glove forces and thumb torque must be > 0");
  }
  if (!(flex_arm > 0 && ext_arm > 0)) throw ConfigError("glove moment arms must be > 0");
  if (mask.size() != hand.num_joints()) throw ConfigError("glove mask size mismatch");
  const GloveModel ref = for_hand(hand);
  if (finger_joints != ref.finger_joints || thumb_joint != ref.thumb_joint || mask != ref.mask) {
    throw ConfigError("glove must act on exactly index/middle MCP+PIP and thumb CMC");
  }
}

json glove_model_to_json(const GloveModel& g) {
  return {{"flex_force", g.flex_force}, {"flex_arm", g.flex_arm},
          {"ext_force", g.ext_force},   {"ext_arm", g.ext_arm},
          {"thumb_torque", g.thumb_torque}};
}

GloveModel glove_model_from_json(const json& j, const HandModel& hand) {
  GloveModel g = GloveModel::for_hand(hand);
  try {
    g.flex_force = j.value("flex_force", g.flex_force);
    g.flex_arm = j.value("flex_arm", g.flex_arm);
    g.ext_force = j.value("ext_force", g.ext_force);
    g.ext_arm = j.value("ext_arm", g.ext_arm);
    g.thumb_torque = j.value("thumb_torque", g.thumb_torque);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("glove config: ") + e.what());
  }
  g.validate(hand);
  return g;
}

Vec clamp_glove_action(const Vec& action) {
  if (action.size() != kGloveActionDim) {
    throw UsageError("glove action must have 3 entries");
  }
  Vec a = action;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    // NaN maps to 0 so a broken controller cannot inject torque.
    a[i] = std::isnan(a[i]) ? 0.0 : std::clamp(a[i], 0.0, 1.0);
  }
  return a;
}

Vec glove_torques(const Vec& action, const Vec& q, const GloveModel& glove) {
  const Vec a = clamp_glove_action(action);
  Vec tau = Vec::Zero(glove.mask.size());
  if (q.size() != tau.size()) throw UsageError("joint vector size does not match the glove");
  const double finger = a[0] * glove.flex_force * glove.flex_arm -
                        a[1] * glove.ext_force * glove.ext_arm;
  for (int j : glove.finger_joints) tau[j] = finger;
  tau[glove.thumb_joint] = a[2] * glove.thumb_torque;
  return tau.cwiseProduct(glove.mask);
}

FrozenPolicy::FrozenPolicy(Agent agent)
    : agent_(std::move(agent)), digest_(compute_digest(agent_)) {}

std::string FrozenPolicy::compute_digest(const Agent& agent) {
  const RunningNorm& n = agent.obs_norm;
  Vec norm(n.mean.size() + n.var.size() + 2);
  norm << n.mean, n.var, n.count, n.clip;
  return sha256_hex(agent.params.digest() + "|" +
                    sha256_hex(std::span<const double>(norm.data(),
                                                       static_cast<std::size_t>(norm.size()))));
}

void FrozenPolicy::verify() const {
  if (compute_digest(agent_) != digest_) {
    throw ValidationError("frozen hand policy changed (digest mismatch)");
  }
}

StepResult shared_step(HandEnv& env, const FrozenPolicy& frozen, const Vec& obs,
                       const Vec& glove_action, const GloveModel& glove, bool verify) {
  if (verify) frozen.verify();
  const Vec hand_action = frozen.act(obs);
  env.set_external_torques(glove_torques(glove_action, env.hand_state().q, glove));
  return env.step(hand_action);
}

GloveEnv::GloveEnv(std::unique_ptr<HandEnv> hand, std::shared_ptr<const FrozenPolicy> frozen,
                   GloveModel glove)
    : hand_(std::move(hand)), frozen_(std::move(frozen)), glove_(std::move(glove)) {
  if (!hand_ || !frozen_) throw ConfigError("glove environment needs a hand and a policy");
  glove_.validate(hand_->model());
  const auto& p = frozen_->agent().params;
  if (p.obs_dim != hand_->obs_dim() || p.act_dim != hand_->action_dim()) {
    throw ConfigError("frozen policy dimensions do not match the hand environment");
  }
}

Vec GloveEnv::reset(std::uint64_t seed) {
  hand_->clear_external_torques();
  obs_ = hand_->reset(seed);
  return obs_;
}

StepResult GloveEnv::step(const Vec& action) {
  StepResult r = shared_step(*hand_, *frozen_, obs_, action, glove_, false);
  obs_ = r.obs;
  return r;
}

json GloveEnv::save_state() const { return {{"hand", hand_->save_state()}, {"obs", to_json(obs_)}}; }

void GloveEnv::load_state(const json& j) {
  hand_->load_state(j.at("hand"));
  obs_ = vec_from_json(j.at("obs"));
}

}  // namespace exohand
