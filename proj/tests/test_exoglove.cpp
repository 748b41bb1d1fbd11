#include <cmath>

#include "doctest.h"
#include "exohand/exoglove.hpp"

using namespace exohand;

namespace {

const DemoTrajectory& demo() {
  static const DemoTrajectory d = [] {
    DemoSpec spec;
    return synth_demo(spec, desk_hand_model(), ycb_object(spec.object_id), SupportPlane{},
                      Vec3(0, 0, -9.81));
  }();
  return d;
}

Agent random_agent(int obs, int act, std::uint64_t seed) {
  Rng r(seed);
  return Agent{PolicyParams::init(obs, act, {16, 16}, r, -1.0), RunningNorm::identity(obs)};
}

std::unique_ptr<HandEnv> weak_env() {
  const SceneConfig scene;
  return std::make_unique<HandEnv>(scene, EnvConfig{}, demo(),
                                   WeaknessProfile::uniform(scene.hand.num_muscles(), 0.5));
}

}  // namespace

TEST_SUITE("exoglove") {

TEST_CASE("standard attachment acts on index and middle MCP/PIP and thumb CMC") {
  const HandModel m = desk_hand_model();
  const GloveModel g = GloveModel::for_hand(m);
  CHECK_NOTHROW(g.validate(m));
  std::vector<std::string> names;
  for (int i = 0; i < m.num_joints(); ++i) {
    if (g.mask[i] != 0.0) names.push_back(m.joints[static_cast<std::size_t>(i)].name);
  }
  std::sort(names.begin(), names.end());
  CHECK(names == std::vector<std::string>{"index_mcp", "index_pip", "middle_mcp", "middle_pip",
                                          "thumb_cmc"});
}

TEST_CASE("glove torques are local to the attached joints") {
  const HandModel m = desk_hand_model();
  const GloveModel g = GloveModel::for_hand(m);
  Rng r(1);
  const Vec q = Vec::Zero(m.num_joints());
  for (int k = 0; k < 1000; ++k) {
    Vec a(3);
    a << r.uniform(-1, 2), r.uniform(-1, 2), r.uniform(-1, 2);
    const Vec tau = glove_torques(a, q, g);
    for (int i = 0; i < m.num_joints(); ++i) {
      if (g.mask[i] == 0.0) REQUIRE(tau[i] == 0.0);
    }
  }
}

TEST_CASE("glove torques follow the tendon formula") {
  const HandModel m = desk_hand_model();
  const GloveModel g = GloveModel::for_hand(m);
  const Vec q = Vec::Zero(m.num_joints());
  Vec a(3);
  a << 0.8, 0.3, 0.6;
  const Vec tau = glove_torques(a, q, g);
  const double finger = 0.8 * g.flex_force * g.flex_arm - 0.3 * g.ext_force * g.ext_arm;
  for (int j : g.finger_joints) CHECK(tau[j] == doctest::Approx(finger).epsilon(1e-15));
  CHECK(tau[g.thumb_joint] == doctest::Approx(0.6 * g.thumb_torque));
}

TEST_CASE("glove torques are monotone in each channel") {
  const HandModel m = desk_hand_model();
  const GloveModel g = GloveModel::for_hand(m);
  const Vec q = Vec::Zero(m.num_joints());
  Rng r(2);
  for (int k = 0; k < 500; ++k) {
    Vec a(3);
    a << r.uniform(), r.uniform(), r.uniform();
    const Vec base = glove_torques(a, q, g);
    for (int c = 0; c < 3; ++c) {
      Vec b = a;
      b[c] = std::min(1.0, a[c] + r.uniform(0.0, 0.5));
      const Vec t = glove_torques(b, q, g);
      const int f = g.finger_joints.front();
      if (c == 0) CHECK(t[f] >= base[f]);
      if (c == 1) CHECK(t[f] <= base[f]);
      if (c == 2) CHECK(t[g.thumb_joint] >= base[g.thumb_joint]);
    }
  }
}

TEST_CASE("glove actions clamp to [0, 1] and treat nan as zero") {
  Vec a(3);
  a << -0.5, 2.0, std::nan("");
  const Vec c = clamp_glove_action(a);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 1.0);
  CHECK(c[2] == 0.0);
  CHECK_THROWS_AS(clamp_glove_action(Vec::Zero(2)), UsageError);
}

TEST_CASE("glove model validation and json round trip") {
  const HandModel m = desk_hand_model();
  GloveModel g = GloveModel::for_hand(m);
  g.flex_force = 35.0;
  const GloveModel back = glove_model_from_json(glove_model_to_json(g), m);
  CHECK(back.flex_force == 35.0);
  CHECK(back.mask == g.mask);
  GloveModel bad = g;
  bad.mask[0] = 1.0;
  CHECK_THROWS_AS(bad.validate(m), ConfigError);
  bad = g;
  bad.thumb_torque = 0.0;
  CHECK_THROWS_AS(bad.validate(m), ConfigError);
}

TEST_CASE("frozen policy digest covers parameters and normalizer") {
  const Agent a = random_agent(126, 19, 1);
  const FrozenPolicy f(a);
  CHECK_NOTHROW(f.verify());
  CHECK(f.digest() == FrozenPolicy::compute_digest(a));
  Agent b = a;
  b.params.flat[7] += 1e-12;
  CHECK(FrozenPolicy::compute_digest(b) != f.digest());
  Agent c = a;
  c.obs_norm.mean[0] = 1e-9;
  CHECK(FrozenPolicy::compute_digest(c) != f.digest());
}

TEST_CASE("shared step equals the hand step with glove torques added") {
  const auto frozen = std::make_shared<const FrozenPolicy>(random_agent(126, 19, 2));
  const GloveModel g = GloveModel::for_hand(desk_hand_model());
  auto a = weak_env();
  auto b = weak_env();
  Vec obs_a = a->reset(3);
  Vec obs_b = b->reset(3);
  Rng r(4);
  for (int k = 0; k < 50; ++k) {
    Vec ga(3);
    ga << r.uniform(), r.uniform(), r.uniform();
    const StepResult sa = shared_step(*a, *frozen, obs_a, ga, g);
    b->set_external_torques(glove_torques(ga, b->hand_state().q, g));
    const StepResult sb = b->step(frozen->act(obs_b));
    REQUIRE(sa.obs == sb.obs);
    REQUIRE(sa.reward == sb.reward);
    obs_a = sa.obs;
    obs_b = sb.obs;
  }
}

TEST_CASE("zero glove action leaves the weak hand unassisted") {
  const auto frozen = std::make_shared<const FrozenPolicy>(random_agent(126, 19, 5));
  GloveEnv env(weak_env(), frozen, GloveModel::for_hand(desk_hand_model()));
  auto plain = weak_env();
  Vec obs = plain->reset(9);
  CHECK(env.reset(9) == obs);
  for (int k = 0; k < 50; ++k) {
    const StepResult a = env.step(Vec::Zero(3));
    const StepResult b = plain->step(frozen->act(obs));
    REQUIRE(a.obs == b.obs);
    obs = b.obs;
  }
}

TEST_CASE("glove environment state round trip") {
  const auto frozen = std::make_shared<const FrozenPolicy>(random_agent(126, 19, 6));
  const GloveModel g = GloveModel::for_hand(desk_hand_model());
  GloveEnv env(weak_env(), frozen, g);
  CHECK(env.obs_dim() == 126);
  CHECK(env.action_dim() == 3);
  env.reset(2);
  Vec act = Vec::Constant(3, 0.5);
  for (int k = 0; k < 20; ++k) env.step(act);
  const json saved = env.save_state();
  std::vector<StepResult> first;
  for (int k = 0; k < 20; ++k) first.push_back(env.step(act));
  GloveEnv other(weak_env(), frozen, g);
  other.load_state(json::parse(saved.dump()));
  for (int k = 0; k < 20; ++k) REQUIRE(other.step(act).obs == first[static_cast<std::size_t>(k)].obs);
}

TEST_CASE("glove environment rejects a mismatched policy") {
  const auto frozen = std::make_shared<const FrozenPolicy>(random_agent(10, 19, 7));
  CHECK_THROWS_AS(GloveEnv(weak_env(), frozen, GloveModel::for_hand(desk_hand_model())),
                  ConfigError);
}

}
