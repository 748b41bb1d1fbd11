#include <cmath>

#include "doctest.h"
#include "exohand/biomech.hpp"
#include "oracles.hpp"

using namespace exohand;

namespace {

HandState random_state(const HandModel& m, Rng& r) {
  HandState s = HandState::at_rest(m);
  for (int i = 0; i < m.num_joints(); ++i) {
    const auto& j = m.joints[static_cast<std::size_t>(i)];
    s.q[i] = r.uniform(j.lo, j.hi);
    s.qd[i] = r.uniform(-3.0, 3.0);
  }
  s.base_pos = Vec3(r.uniform(-0.2, 0.2), r.uniform(-0.2, 0.2), r.uniform(0.0, 0.3));
  s.base_rot = Vec3(r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1));
  s.base_lin_vel = Vec3(r.uniform(-0.5, 0.5), r.uniform(-0.5, 0.5), r.uniform(-0.5, 0.5));
  s.base_ang_vel = Vec3(r.uniform(-2, 2), r.uniform(-2, 2), r.uniform(-2, 2));
  return s;
}

Vec random_vec(int n, Rng& r, double lo, double hi) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = r.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_SUITE("biomech") {

TEST_CASE("desk model shape") {
  const HandModel m = desk_hand_model();
  CHECK_NOTHROW(m.validate());
  CHECK(m.num_joints() == 17);
  CHECK(m.num_muscles() == 13);
  CHECK(m.moment_arm_matrix().rows() == 17);
  CHECK(m.moment_arm_matrix().cols() == 13);
  for (int c = 0; c < kNumFingers; ++c) {
    int bones = 0;
    for (int i : m.chain_joints(c)) bones += m.joints[static_cast<std::size_t>(i)].bone > 0.0;
    CHECK(bones == 3);
  }
}

TEST_CASE("validate rejects broken models") {
  HandModel m = desk_hand_model();
  SUBCASE("unordered limits") { m.joints[3].lo = m.joints[3].hi + 0.1; }
  SUBCASE("zero inertia") { m.joints[0].inertia = 0.0; }
  SUBCASE("non-unit axis") { m.joints[5].axis = Vec3(0.0, 0.0, 2.0); }
  SUBCASE("moment arm length") { m.muscles[0].moment_arms = Vec::Zero(3); }
  CHECK_THROWS_AS(m.validate(), ConfigError);
}

TEST_CASE("activation stays in [0, 1] for any excitation") {
  const HandModel m = desk_hand_model();
  Rng r(1);
  Vec a = Vec::Zero(m.num_muscles());
  for (int k = 0; k < 5000; ++k) {
    const Vec u = random_vec(m.num_muscles(), r, -2.0, 3.0);
    const double dt = r.uniform(1e-4, 0.1);
    const Vec next = activation_step(a, u, m, dt);
    REQUIRE(next.minCoeff() >= 0.0);
    REQUIRE(next.maxCoeff() <= 1.0);
    a = next;
  }
}

TEST_CASE("activation moves toward the clamped excitation without overshoot") {
  const HandModel m = desk_hand_model();
  Rng r(2);
  for (int k = 0; k < 2000; ++k) {
    const Vec a = random_vec(m.num_muscles(), r, 0.0, 1.0);
    const Vec u = random_vec(m.num_muscles(), r, 0.0, 1.0);
    const Vec next = activation_step(a, u, m, 0.002);
    for (int i = 0; i < a.size(); ++i) {
      CHECK((next[i] - a[i]) * (u[i] - a[i]) >= 0.0);
      CHECK(std::abs(next[i] - a[i]) <= std::abs(u[i] - a[i]) + 1e-15);
    }
  }
}

TEST_CASE("activation uses the faster constant when rising") {
  const HandModel m = desk_hand_model();
  const int n = m.num_muscles();
  const Vec up = activation_step(Vec::Constant(n, 0.5), Vec::Ones(n), m, 0.001);
  const Vec down = activation_step(Vec::Constant(n, 0.5), Vec::Zero(n), m, 0.001);
  const auto& mu = m.muscles[0];
  CHECK(up[0] - 0.5 == doctest::Approx(0.001 * 0.5 / mu.tau_act));
  CHECK(0.5 - down[0] == doctest::Approx(0.001 * 0.5 / mu.tau_deact));
}

TEST_CASE("muscle torques are linear in activation and match R F a") {
  const HandModel m = desk_hand_model();
  const int n = m.num_muscles();
  Rng r(3);
  const WeaknessProfile id = WeaknessProfile::identity(n);
  for (int k = 0; k < 200; ++k) {
    const Vec a1 = random_vec(n, r, 0.0, 0.5);
    const Vec a2 = random_vec(n, r, 0.0, 0.5);
    const double s = r.uniform(0.0, 2.0);
    const Vec lhs = muscle_torques(a1 + s * a2, m, id);
    const Vec rhs = muscle_torques(a1, m, id) + s * muscle_torques(a2, m, id);
    CHECK((lhs - rhs).norm() <= 1e-12 * std::max(1.0, lhs.norm()));

    Vec expected = Vec::Zero(m.num_joints());
    for (int mu = 0; mu < n; ++mu) {
      const auto& muscle = m.muscles[static_cast<std::size_t>(mu)];
      for (int j = 0; j < m.num_joints(); ++j) {
        expected[j] += muscle.moment_arms[j] * a1[mu] * muscle.f_max;
      }
    }
    CHECK((muscle_torques(a1, m, id) - expected).norm() <= 1e-12);
  }
}

TEST_CASE("weakness scales torques and matches apply_weakness") {
  const HandModel m = desk_hand_model();
  const int n = m.num_muscles();
  const Vec a = Vec::Constant(n, 0.7);
  const WeaknessProfile half = WeaknessProfile::uniform(n, 0.5);
  const Vec weak = muscle_torques(a, m, half);
  const Vec full = muscle_torques(a, m, WeaknessProfile::identity(n));
  CHECK((weak - 0.5 * full).norm() < 1e-14);
  const HandModel mw = apply_weakness(m, half);
  CHECK((muscle_torques(a, mw, WeaknessProfile::identity(n)) - weak).norm() < 1e-14);
}

TEST_CASE("weakness profiles validate their range") {
  const HandModel m = desk_hand_model();
  CHECK_THROWS_AS(WeaknessProfile::uniform(13, 0.0).validate(13), ValidationError);
  CHECK_THROWS_AS(WeaknessProfile::uniform(13, 1.5).validate(13), ValidationError);
  CHECK_THROWS_AS(WeaknessProfile::uniform(12, 0.5).validate(13), ValidationError);
  const auto g = WeaknessProfile::by_group(m, {{"flexor", 0.3}});
  for (int i = 0; i < m.num_muscles(); ++i) {
    const bool flexor = m.muscles[static_cast<std::size_t>(i)].group == "flexor";
    CHECK(g.scale[i] == (flexor ? 0.3 : 1.0));
  }
}

TEST_CASE("forward kinematics matches the independent oracle") {
  const HandModel m = desk_hand_model();
  Rng r(4);
  for (int k = 0; k < 500; ++k) {
    const HandState s = random_state(m, r);
    const Keypoints got = forward_kinematics(s, m);
    const Keypoints want = oracle::forward_kinematics(m, s);
    REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("bone lengths are preserved in every configuration") {
  const HandModel m = desk_hand_model();
  Rng r(5);
  for (int k = 0; k < 1000; ++k) {
    const HandState s = random_state(m, r);
    const Keypoints kp = forward_kinematics(s, m);
    for (int c = 0; c < kNumFingers; ++c) {
      int slot = 1 + 4 * c;
      for (int i : m.chain_joints(c)) {
        const double bone = m.joints[static_cast<std::size_t>(i)].bone;
        if (bone <= 0.0) continue;
        const double len = (kp.col(slot + 1) - kp.col(slot)).norm();
        REQUIRE(std::abs(len - bone) <= 1e-12 * bone);
        ++slot;
      }
    }
  }
}

TEST_CASE("point velocity matches finite differences of keypoints") {
  const HandModel m = desk_hand_model();
  Rng r(6);
  for (int k = 0; k < 50; ++k) {
    HandState s = random_state(m, r);
    const Kinematics kin = compute_kinematics(s, m);
    const double h = 1e-7;
    HandState sp = s, sm = s;
    sp.q += h * s.qd;
    sm.q -= h * s.qd;
    sp.base_pos += h * s.base_lin_vel;
    sm.base_pos -= h * s.base_lin_vel;
    const Quat base = quat_from_rotation_vector(s.base_rot);
    sp.base_rot = rotation_vector(quat_from_rotation_vector(h * s.base_ang_vel) * base);
    sm.base_rot = rotation_vector(quat_from_rotation_vector(-h * s.base_ang_vel) * base);
    const Keypoints kp = forward_kinematics(sp, m);
    const Keypoints km = forward_kinematics(sm, m);
    for (int f = 0; f < kNumFingers; ++f) {
      const int tip = keypoint_index(static_cast<Finger>(f), Knuckle::kTip);
      const Vec3 fd = (kp.col(tip) - km.col(tip)) / (2 * h);
      const Vec3 v = point_velocity(kin, s, m, f, kin.keypoints.col(tip));
      CHECK((fd - v).norm() < 1e-6 * std::max(1.0, v.norm()));
    }
  }
}

TEST_CASE("generalized forces do the same virtual work as the point force") {
  const HandModel m = desk_hand_model();
  Rng r(7);
  for (int k = 0; k < 200; ++k) {
    HandState s = random_state(m, r);
    s.base_lin_vel.setZero();
    s.base_ang_vel.setZero();
    const Kinematics kin = compute_kinematics(s, m);
    const int chain = static_cast<int>(r.below(kNumFingers));
    const Vec3 point = kin.fingertip(static_cast<Finger>(chain));
    const Vec3 force(r.uniform(-5, 5), r.uniform(-5, 5), r.uniform(-5, 5));
    Vec tau = Vec::Zero(m.num_joints());
    accumulate_point_force(kin, m, chain, point, force, tau);
    const double power_joint = tau.dot(s.qd);
    const double power_point = force.dot(point_velocity(kin, s, m, chain, point));
    CHECK(std::abs(power_joint - power_point) < 1e-9);
    // Joints of other chains are untouched.
    const auto support = supporting_joints(m, chain);
    for (int i = 0; i < m.num_joints(); ++i) {
      if (std::find(support.begin(), support.end(), i) == support.end()) CHECK(tau[i] == 0.0);
    }
  }
}

TEST_CASE("passive joints dissipate energy") {
  HandModel m = desk_hand_model();
  Rng r(8);
  HandState s = random_state(m, r);
  s.base_lin_vel.setZero();
  s.base_ang_vel.setZero();
  // Small swings about neutral stay clear of the soft limits.
  for (int i = 0; i < m.num_joints(); ++i) {
    const auto& j = m.joints[static_cast<std::size_t>(i)];
    s.q[i] = j.neutral;
    s.qd[i] = r.uniform(-0.1, 0.1);
  }
  const Vec zero = Vec::Zero(m.num_joints());
  const double dt = 0.0005;

  SUBCASE("kinetic energy strictly decays without stiffness") {
    for (auto& j : m.joints) j.stiffness = 0.0;
    for (int k = 0; k < 2000; ++k) {
      const HandState n = dynamics_step(s, m, zero, zero, dt);
      for (int i = 0; i < m.num_joints(); ++i) {
        if (s.qd[i] != 0.0) REQUIRE(std::abs(n.qd[i]) < std::abs(s.qd[i]));
      }
      s = n;
    }
  }

  SUBCASE("total mechanical energy decreases over each window") {
    auto energy = [&](const HandState& st) {
      double e = 0.0;
      for (int i = 0; i < m.num_joints(); ++i) {
        const auto& j = m.joints[static_cast<std::size_t>(i)];
        e += 0.5 * j.inertia * st.qd[i] * st.qd[i] +
             0.5 * j.stiffness * (st.q[i] - j.neutral) * (st.q[i] - j.neutral);
      }
      return e;
    };
    double prev = energy(s);
    for (int w = 0; w < 20; ++w) {
      for (int k = 0; k < 200; ++k) s = dynamics_step(s, m, zero, zero, dt);
      const double e = energy(s);
      CHECK(e < prev);
      prev = e;
    }
  }
}

TEST_CASE("dynamics respects hard joint limits") {
  const HandModel m = desk_hand_model();
  HandState s = HandState::at_rest(m);
  const Vec push = Vec::Constant(m.num_joints(), 50.0);
  const Vec zero = Vec::Zero(m.num_joints());
  for (int k = 0; k < 500; ++k) s = dynamics_step(s, m, push, zero, 0.0005);
  for (int i = 0; i < m.num_joints(); ++i) {
    CHECK(s.q[i] <= m.joints[static_cast<std::size_t>(i)].hi);
  }
}

TEST_CASE("dynamics rejects non-finite torques") {
  const HandModel m = desk_hand_model();
  const HandState s = HandState::at_rest(m);
  Vec tau = Vec::Zero(m.num_joints());
  tau[2] = std::nan("");
  CHECK_THROWS_AS(dynamics_step(s, m, tau, Vec::Zero(m.num_joints()), 0.001), StepError);
}

TEST_CASE("hand model json round trip") {
  const HandModel m = desk_hand_model();
  const HandModel back = hand_model_from_json(hand_model_to_json(m));
  CHECK(back == m);
}

TEST_CASE("keypoint csv round trip") {
  const HandModel m = desk_hand_model();
  Rng r(9);
  const Keypoints kp = forward_kinematics(random_state(m, r), m);
  const Keypoints back = keypoints_from_csv(keypoints_to_csv(kp));
  CHECK((back - kp).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS(keypoints_from_csv("x,y,z\n1,2,3\n"));
}

}
