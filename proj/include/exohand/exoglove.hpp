#pragma once

// Tendon-driven assistive glove acting on a HandEnv through external joint
// torques, with the hand driven by a frozen policy (shared control).
//
// Glove action: [contraction, extension, thumb support], each in [0, 1].

#include <memory>
#include <string>
#include <vector>

#include "exohand/env.hpp"
#include "exohand/rl.hpp"

namespace exohand {

inline constexpr int kGloveActionDim = 3;

struct GloveModel {
  std::vector<int> finger_joints;  // index/middle MCP and PIP
  int thumb_joint = -1;            // thumb CMC internal rotation
  double flex_force = 20.0;        // N
  double flex_arm = 0.005;         // m
  double ext_force = 20.0;         // N
  double ext_arm = 0.005;          // m
  double thumb_torque = 0.5;       // N m
  Vec mask;                        // 1 at permitted joints, 0 elsewhere

  /// Standard attachment for a hand model (looks up joints by name).
  static GloveModel for_hand(const HandModel& hand);
  /// Throws ConfigError on a broken invariant.
  void validate(const HandModel& hand) const;
};

json glove_model_to_json(const GloveModel& g);
/// Reads forces and arms; joints are always attached by name.
GloveModel glove_model_from_json(const json& j, const HandModel& hand);

/// Componentwise clamp to [0, 1].
Vec clamp_glove_action(const Vec& action);

/// tau = contraction F_flex r_flex - extension F_ext r_ext on the finger
/// joints, plus support * tau_thumb on the thumb joint, zero elsewhere.
/// `q` is accepted for interface stability; the fixed moment arms ignore it.
Vec glove_torques(const Vec& action, const Vec& q, const GloveModel& glove);

/// Immutable hand policy used as the plant during glove training.
class FrozenPolicy {
 public:
  explicit FrozenPolicy(Agent agent);
  const std::string& digest() const { return digest_; }
  /// Recomputes the digest; throws ValidationError on mismatch.
  void verify() const;
  Vec act(const Vec& obs) const { return agent_.act(obs); }
  const Agent& agent() const { return agent_; }

  static std::string compute_digest(const Agent& agent);

 private:
  Agent agent_;
  std::string digest_;
};

/// One shared-control step: the frozen policy acts on `obs`, glove torques
/// join the same dynamics step. `verify` checks the frozen digest first.
StepResult shared_step(HandEnv& env, const FrozenPolicy& frozen, const Vec& obs,
                       const Vec& glove_action, const GloveModel& glove, bool verify = true);

/// Environment seen by the glove controller: same observation and reward as
/// the hand, 3-dim action.
class GloveEnv : public Environment {
 public:
  GloveEnv(std::unique_ptr<HandEnv> hand, std::shared_ptr<const FrozenPolicy> frozen,
           GloveModel glove);

  int obs_dim() const override { return hand_->obs_dim(); }
  int action_dim() const override { return kGloveActionDim; }
  Vec reset(std::uint64_t seed) override;
  StepResult step(const Vec& action) override;
  json save_state() const override;
  void load_state(const json& j) override;

  HandEnv& hand() { return *hand_; }
  const HandEnv& hand() const { return *hand_; }
  const FrozenPolicy& frozen() const { return *frozen_; }
  const GloveModel& glove() const { return glove_; }

 private:
  std::unique_ptr<HandEnv> hand_;
  std::shared_ptr<const FrozenPolicy> frozen_;
  GloveModel glove_;
  Vec obs_;
};

}  // namespace exohand
