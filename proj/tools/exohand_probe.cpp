// Scripted open-loop grasps for inspecting the desk physics.
//
//   exohand_probe [kind] [excitation] [weakness] [glove_contraction] [glove_thumb]
//                 [hold_excitation]

#include <cstdio>
#include <string>

#include "exohand/env.hpp"
#include "exohand/exoglove.hpp"
#include "exohand/trajio.hpp"

using namespace exohand;

int main(int argc, char** argv) {
  const std::string kind = argc > 1 ? argv[1] : "lift";
  const double e = argc > 2 ? std::stod(argv[2]) : 1.0;
  const double weak = argc > 3 ? std::stod(argv[3]) : 1.0;
  const double gc = argc > 4 ? std::stod(argv[4]) : 0.0;
  const double gt = argc > 5 ? std::stod(argv[5]) : 0.0;
  const double e_hold = argc > 6 ? std::stod(argv[6]) : e;

  SceneConfig scene;
  EnvConfig cfg;
  cfg.noise_std_frac = 0.0;
  cfg.reset_perturbation = 0.0;
  DemoSpec spec;
  spec.kind = demo_kind_from_string(kind);
  const DemoTrajectory demo = synth_demo(spec, scene.hand, scene.object, scene.table, scene.gravity);
  HandEnv env(scene, cfg, demo, WeaknessProfile::uniform(scene.hand.num_muscles(), weak));
  const GloveModel glove = GloveModel::for_hand(env.model());
  std::printf("ik residual %.5f\n", env.ik_residual());
  env.reset(1);
  const int m = env.model().num_muscles();
  const int mid_pip = keypoint_index(Finger::kMiddle, Knuckle::kPip);
  int success = 0;
  for (int k = 0; k < cfg.horizon; ++k) {
    Vec a = Vec::Zero(m + kBaseDofs);
    const double t = (k + 1) * cfg.dt;
    const double ramp = std::min(1.0, t / 0.2);
    const double level = t < 0.3 ? e : e_hold;
    for (int i = 0; i < m; ++i) {
      const auto& mu = env.model().muscles[static_cast<std::size_t>(i)];
      if (mu.name.rfind("fd_", 0) == 0 || mu.name == "fpl" || mu.name == "adp") a[i] = level * ramp;
    }
    const Vec3 target = env.reference(k + 1).keypoints.col(kWristKeypoint);
    const Vec3 rate = (target - env.hand_state().base_pos) / cfg.dt / cfg.max_lin_rate;
    a.segment<3>(m) = rate.cwiseMax(-1.0).cwiseMin(1.0);
    Vec g(3);
    g << gc, 0.0, gt;
    env.set_external_torques(glove_torques(g, env.hand_state().q, glove));
    const StepResult r = env.step(a);
    success += r.info.success_step;
    if (k % 25 == 24 || r.done) {
      const Keypoints kp = env.keypoints();
      double fsum = 0.0;
      for (const auto& c : env.last_hand_contacts()) fsum += c.normal_force;
      std::printf("t=%.3f err=%.4f z=%.4f demo=%.4f contacts=%zu fn=%.2f pipw=%.4f q_mcp=%.2f\n", t,
                  r.info.obj_pos_err, env.object().pos.z(), r.info.demo_err,
                  env.last_hand_contacts().size(), fsum,
                  (kp.col(mid_pip) - kp.col(kWristKeypoint)).norm(),
                  env.hand_state().q[env.model().joint_index("middle_mcp")]);
    }
    if (r.done) break;
  }
  std::printf("success %.3f\n", success / double(cfg.horizon));
}
