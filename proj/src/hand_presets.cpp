#include <cmath>

#include "exohand/biomech.hpp"

namespace exohand {

namespace {

struct FingerGeometry {
  const char* name;
  Vec3 mcp;
  double proximal, middle, distal;
  double flexor_fmax;
};

Mat3 chain_frame(const Vec3& bone_dir) {
  const Vec3 ex = bone_dir.normalized();
  const Vec3 ey = Vec3::UnitZ().cross(ex).normalized();
  const Vec3 ez = ex.cross(ey);
  Mat3 f;
  f.col(0) = ex;
  f.col(1) = ey;
  f.col(2) = ez;
  return f;
}

Joint make_joint(std::string name, std::string segment, int chain, Vec3 axis,
                 double lo, double hi, double inertia, double damping,
                 double stiffness, double neutral, double bone) {
  Joint j;
  j.name = std::move(name);
  j.segment = std::move(segment);
  j.chain = chain;
  j.axis = axis;
  j.lo = lo;
  j.hi = hi;
  j.inertia = inertia;
  j.damping = damping;
  j.stiffness = stiffness;
  j.neutral = neutral;
  j.bone = bone;
  return j;
}

}  // namespace

// Palm frame: x runs distally along the fingers, y points out of the palm,
// z points radially (toward the thumb). Finger flexion is a positive rotation
// about +z, which curls the fingers toward +y.
HandModel desk_hand_model() {
  HandModel m;
  m.fingertip_radius = 0.009;
  m.palm_sphere_center = Vec3(0.055, -0.002, 0.0);
  m.palm_sphere_radius = 0.014;
  m.limit_stiffness = 20.0;
  m.limit_margin = 0.05;

  m.joints.push_back(make_joint("wrist_flex", "forearm", -1, Vec3::UnitZ(), -1.0,
                                1.0, 5e-3, 0.2, 2.0, 0.0, 0.0));
  m.joints.push_back(make_joint("wrist_dev", "wrist", -1, -Vec3::UnitY(), -0.4,
                                0.4, 5e-3, 0.2, 2.0, 0.0, 0.0));

  // Thumb: a planar ray on the radial side. The CMC DoF is the internal
  // (opposition) rotation of the whole ray toward the fingers; MCP and IP
  // flex in the same plane, curling the tip toward +x of the palm.
  const Vec3 thumb_dir(-0.1, 1.0, 0.0);
  m.chains[0] = {"thumb", Vec3(0.005, 0.010, 0.030), chain_frame(thumb_dir)};
  m.joints.push_back(make_joint("thumb_cmc", "palm", 0, -Vec3::UnitZ(), -0.3, 0.9,
                                1e-3, 0.04, 0.15, 0.0, 0.040));
  m.joints.push_back(make_joint("thumb_mcp", "thumb_metacarpal", 0, -Vec3::UnitZ(),
                                -0.2, 1.2, 1e-3, 0.04, 0.10, 0.1, 0.032));
  m.joints.push_back(make_joint("thumb_ip", "thumb_proximal", 0, -Vec3::UnitZ(),
                                -0.2, 1.4, 5e-4, 0.04, 0.05, 0.1, 0.026));

  const FingerGeometry fingers[] = {
      {"index", Vec3(0.088, 0.0, 0.027), 0.042, 0.025, 0.020, 20.0},
      {"middle", Vec3(0.090, 0.0, 0.009), 0.046, 0.028, 0.021, 20.0},
      {"ring", Vec3(0.086, 0.0, -0.009), 0.043, 0.026, 0.020, 18.0},
      {"pinky", Vec3(0.080, 0.0, -0.027), 0.034, 0.020, 0.018, 15.0},
  };
  for (int f = 0; f < 4; ++f) {
    const auto& g = fingers[f];
    const int c = f + 1;
    const std::string n = g.name;
    m.chains[static_cast<std::size_t>(c)] = {n, g.mcp, Mat3::Identity()};
    m.joints.push_back(make_joint(n + "_mcp", "palm", c, Vec3::UnitZ(), -0.3, 1.6,
                                  1e-3, 0.04, 0.14, 0.15, g.proximal));
    m.joints.push_back(make_joint(n + "_pip", n + "_proximal", c, Vec3::UnitZ(), 0.0,
                                  1.9, 5e-4, 0.04, 0.10, 0.15, g.middle));
    m.joints.push_back(make_joint(n + "_dip", n + "_middle", c, Vec3::UnitZ(), 0.0,
                                  1.3, 2.5e-4, 0.04, 0.05, 0.10, g.distal));
  }

  const int nj = m.num_joints();
  auto add_muscle = [&](std::string name, std::string group, double f_max,
                        std::initializer_list<std::pair<const char*, double>> arms) {
    Muscle mu;
    mu.name = std::move(name);
    mu.group = std::move(group);
    mu.f_max = f_max;
    mu.moment_arms = Vec::Zero(nj);
    for (const auto& [joint, r] : arms) mu.moment_arms[m.joint_index(joint)] = r;
    m.muscles.push_back(std::move(mu));
  };

  for (int f = 0; f < 4; ++f) {
    const std::string n = fingers[f].name;
    add_muscle("fd_" + n, "flexor", fingers[f].flexor_fmax,
               {{(n + "_mcp").c_str(), 0.010}, {(n + "_pip").c_str(), 0.008},
                {(n + "_dip").c_str(), 0.005}});
    add_muscle("ed_" + n, "extensor", 15.0,
               {{(n + "_mcp").c_str(), -0.008}, {(n + "_pip").c_str(), -0.004},
                {(n + "_dip").c_str(), -0.003}});
  }
  add_muscle("fpl", "flexor", 25.0, {{"thumb_mcp", 0.008}, {"thumb_ip", 0.006}});
  add_muscle("epl", "extensor", 15.0, {{"thumb_mcp", -0.006}, {"thumb_ip", -0.004}});
  add_muscle("adp", "adductor", 25.0, {{"thumb_cmc", 0.010}});
  add_muscle("fcr", "flexor", 80.0, {{"wrist_flex", 0.015}, {"wrist_dev", 0.005}});
  add_muscle("ecr", "extensor", 80.0, {{"wrist_flex", -0.015}, {"wrist_dev", -0.005}});

  m.validate();
  return m;
}

}  // namespace exohand
