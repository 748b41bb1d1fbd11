#include "exohand/world.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace exohand {

void RigidObject::validate() const {
  if (!(mass > 0.0)) throw ConfigError("object mass must be > 0");
  if (!(inertia.array() > 0.0).all()) throw ConfigError("object inertia must be > 0");
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CylinderShape>) {
          if (!(s.radius > 0.0 && s.height > 0.0)) {
            throw ConfigError("cylinder dimensions must be > 0");
          }
        } else {
          if (!(s.half_extents.array() > 0.0).all()) {
            throw ConfigError("box half extents must be > 0");
          }
        }
      },
      shape);
}

Vec3 RigidObject::solid_inertia(const Shape& shape, double mass) {
  return std::visit(
      [mass](const auto& s) -> Vec3 {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CylinderShape>) {
          const double r2 = s.radius * s.radius;
          const double side = mass * (3.0 * r2 + s.height * s.height) / 12.0;
          return {side, side, 0.5 * mass * r2};
        } else {
          const Vec3 h2 = s.half_extents.cwiseProduct(s.half_extents);
          return {mass * (h2.y() + h2.z()) / 3.0, mass * (h2.x() + h2.z()) / 3.0,
                  mass * (h2.x() + h2.y()) / 3.0};
        }
      },
      shape);
}

double RigidObject::half_height() const {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CylinderShape>) {
          return 0.5 * s.height;
        } else {
          return s.half_extents.z();
        }
      },
      shape);
}

void ContactParams::validate() const {
  if (!(stiffness > 0.0 && damping > 0.0 && friction > 0.0 && reg_velocity > 0.0)) {
    throw ConfigError("contact parameters must all be positive");
  }
}

namespace {

struct LocalQuery {
  Vec3 point;
  Vec3 normal;
  double distance;
};

LocalQuery cylinder_query(const CylinderShape& c, const Vec3& p) {
  const double hh = 0.5 * c.height;
  const double r = std::hypot(p.x(), p.y());
  const bool radial_in = r <= c.radius;
  const bool axial_in = std::abs(p.z()) <= hh;
  if (!(radial_in && axial_in)) {
    Vec3 q = p;
    if (!radial_in) {
      q.x() *= c.radius / r;
      q.y() *= c.radius / r;
    }
    q.z() = std::clamp(p.z(), -hh, hh);
    const Vec3 d = p - q;
    const double dist = d.norm();
    return {q, d / dist, dist};
  }
  // Inside or on the surface: nearest face.
  const double d_side = c.radius - r;
  const double d_top = hh - p.z();
  const double d_bottom = hh + p.z();
  if (d_side <= d_top && d_side <= d_bottom) {
    Vec3 n = r > 0.0 ? Vec3(p.x() / r, p.y() / r, 0.0) : Vec3::UnitX();
    Vec3 q(c.radius * n.x(), c.radius * n.y(), p.z());
    return {q, n, -d_side};
  }
  if (d_top <= d_bottom) return {Vec3(p.x(), p.y(), hh), Vec3::UnitZ(), -d_top};
  return {Vec3(p.x(), p.y(), -hh), -Vec3::UnitZ(), -d_bottom};
}

LocalQuery box_query(const BoxShape& b, const Vec3& p) {
  const Vec3& h = b.half_extents;
  const bool inside = (p.array().abs() <= h.array()).all();
  if (!inside) {
    const Vec3 q = p.cwiseMax(-h).cwiseMin(h);
    const Vec3 d = p - q;
    const double dist = d.norm();
    return {q, d / dist, dist};
  }
  int axis = 0;
  double best = h.x() - std::abs(p.x());
  for (int k = 1; k < 3; ++k) {
    const double gap = h[k] - std::abs(p[k]);
    if (gap < best) {
      best = gap;
      axis = k;
    }
  }
  Vec3 n = Vec3::Zero();
  n[axis] = p[axis] >= 0.0 ? 1.0 : -1.0;
  Vec3 q = p;
  q[axis] = n[axis] * h[axis];
  return {q, n, -best};
}

Vec3 object_point_velocity(const RigidObject& o, const Vec3& p) {
  return o.lin_vel + o.ang_vel.cross(p - o.pos);
}

}  // namespace

SurfaceQuery closest_surface_point(const RigidObject& object, const Vec3& p) {
  const Mat3 rot = object.quat.toRotationMatrix();
  const Vec3 local = rot.transpose() * (p - object.pos);
  const LocalQuery lq = std::visit(
      [&](const auto& s) -> LocalQuery {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CylinderShape>) {
          return cylinder_query(s, local);
        } else {
          return box_query(s, local);
        }
      },
      object.shape);
  return {object.pos + rot * lq.point, rot * lq.normal, lq.distance};
}

std::vector<ContactPoint> detect_contacts(std::span<const Sphere> spheres,
                                          const RigidObject& object) {
  std::vector<ContactPoint> out;
  for (const auto& s : spheres) {
    const SurfaceQuery sq = closest_surface_point(object, s.center);
    const double depth = s.radius - sq.distance;
    if (depth <= 0.0) continue;
    ContactPoint c;
    c.position = sq.point;
    c.normal = sq.normal;
    c.depth = depth;
    c.rel_velocity = s.velocity - object_point_velocity(object, sq.point);
    c.site = s.site;
    out.push_back(c);
  }
  return out;
}

std::vector<ContactForce> contact_forces(std::span<const ContactPoint> contacts,
                                         const ContactParams& params) {
  std::vector<ContactForce> out;
  out.reserve(contacts.size());
  for (const auto& c : contacts) {
    ContactForce f;
    f.position = c.position;
    f.site = c.site;
    if (c.depth > 0.0) {
      const double vn = c.rel_velocity.dot(c.normal);
      const double fn = std::max(0.0, params.stiffness * c.depth - params.damping * vn);
      const Vec3 vt = c.rel_velocity - vn * c.normal;
      const double slip = vt.norm();
      Vec3 ft = Vec3::Zero();
      if (fn > 0.0 && slip > 0.0) {
        ft = -params.friction * fn * vt / std::max(slip, params.reg_velocity);
      }
      f.normal_force = fn;
      f.tangential_force = ft.norm();
      f.on_object = -(fn * c.normal + ft);
    }
    out.push_back(f);
  }
  return out;
}

std::vector<ContactPoint> detect_plane_contacts(const RigidObject& object,
                                                const SupportPlane& plane) {
  std::vector<ContactPoint> out;
  if (!plane.enabled) return out;
  std::vector<Vec3> samples;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CylinderShape>) {
          constexpr int kRim = 8;
          for (int z = -1; z <= 1; z += 2) {
            for (int k = 0; k < kRim; ++k) {
              const double a = 2.0 * std::numbers::pi * k / kRim;
              samples.emplace_back(s.radius * std::cos(a), s.radius * std::sin(a),
                                   0.5 * z * s.height);
            }
          }
        } else {
          for (int k = 0; k < 8; ++k) {
            samples.emplace_back((k & 1 ? 1.0 : -1.0) * s.half_extents.x(),
                                 (k & 2 ? 1.0 : -1.0) * s.half_extents.y(),
                                 (k & 4 ? 1.0 : -1.0) * s.half_extents.z());
          }
        }
      },
      object.shape);
  const Mat3 rot = object.quat.toRotationMatrix();
  for (const auto& local : samples) {
    const Vec3 w = object.pos + rot * local;
    const double depth = plane.height - w.z();
    if (depth <= 0.0) continue;
    ContactPoint c;
    c.position = w;
    c.normal = -Vec3::UnitZ();
    c.depth = depth;
    c.rel_velocity = -object_point_velocity(object, w);
    out.push_back(c);
  }
  return out;
}

RigidObject object_step(const RigidObject& object,
                        std::span<const AppliedForce> forces,
                        const Vec3& gravity, double dt) {
  if (!(dt > 0.0 && dt <= 0.02)) throw UsageError("object_step requires dt in (0, 0.02]");
  Vec3 total = object.mass * gravity;
  Vec3 torque = Vec3::Zero();
  for (const auto& f : forces) {
    if (!f.force.allFinite() || !f.point.allFinite()) {
      throw StepError("non-finite force applied to object");
    }
    total += f.force;
    torque += (f.point - object.pos).cross(f.force);
  }
  RigidObject next = object;
  next.lin_vel = object.lin_vel + dt * total / object.mass;
  const Mat3 rot = object.quat.toRotationMatrix();
  const Mat3 inertia_world = rot * object.inertia.asDiagonal() * rot.transpose();
  const Vec3 gyro = object.ang_vel.cross(inertia_world * object.ang_vel);
  next.ang_vel = object.ang_vel + dt * inertia_world.ldlt().solve(torque - gyro);
  next.pos = object.pos + dt * next.lin_vel;
  next.quat = (quat_from_rotation_vector(dt * next.ang_vel) * object.quat).normalized();
  if (!next.lin_vel.allFinite() || !next.ang_vel.allFinite()) {
    throw StepError("non-finite object state after step");
  }
  return next;
}

double orientation_angle(const Quat& q1, const Quat& q2) {
  Quat a = q1;
  Quat b = q2;
  // Non-unit input is normalized rather than rejected.
  if (std::abs(a.squaredNorm() - 1.0) > 1e-9) a.normalize();
  if (std::abs(b.squaredNorm() - 1.0) > 1e-9) b.normalize();
  const double d = std::min(1.0, std::abs(a.dot(b)));
  return 2.0 * std::acos(d);
}

double resting_height(const RigidObject& object, const SupportPlane& plane,
                      const Vec3& gravity) {
  const int bottom_samples =
      std::holds_alternative<CylinderShape>(object.shape) ? 8 : 4;
  const double sink = object.mass * std::abs(gravity.z()) /
                      (bottom_samples * plane.params.stiffness);
  return plane.height + object.half_height() - sink;
}

json contact_params_to_json(const ContactParams& p) {
  return {{"stiffness", p.stiffness},
          {"damping", p.damping},
          {"friction", p.friction},
          {"reg_velocity", p.reg_velocity}};
}

ContactParams contact_params_from_json(const json& j) {
  ContactParams p;
  p.stiffness = j.value("stiffness", p.stiffness);
  p.damping = j.value("damping", p.damping);
  p.friction = j.value("friction", p.friction);
  p.reg_velocity = j.value("reg_velocity", p.reg_velocity);
  p.validate();
  return p;
}

json object_to_json(const RigidObject& o) {
  json shape = std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, CylinderShape>) {
          return {{"type", "cylinder"}, {"radius", s.radius}, {"height", s.height}};
        } else {
          return {{"type", "box"}, {"half_extents", to_json(s.half_extents)}};
        }
      },
      o.shape);
  return {{"name", o.name},         {"shape", shape},
          {"mass", o.mass},         {"inertia", to_json(o.inertia)},
          {"pos", to_json(o.pos)},  {"quat", to_json(o.quat)},
          {"lin_vel", to_json(o.lin_vel)}, {"ang_vel", to_json(o.ang_vel)}};
}

RigidObject object_from_json(const json& j) {
  try {
    RigidObject o;
    o.name = j.value("name", std::string());
    const auto& s = j.at("shape");
    const auto type = s.at("type").get<std::string>();
    if (type == "cylinder") {
      o.shape = CylinderShape{s.at("radius").get<double>(), s.at("height").get<double>()};
    } else if (type == "box") {
      o.shape = BoxShape{vec3_from_json(s.at("half_extents"))};
    } else {
      throw ConfigError("unsupported object shape: " + type);
    }
    o.mass = j.at("mass").get<double>();
    o.inertia = j.contains("inertia") ? vec3_from_json(j["inertia"])
                                      : RigidObject::solid_inertia(o.shape, o.mass);
    if (j.contains("pos")) o.pos = vec3_from_json(j["pos"]);
    if (j.contains("quat")) o.quat = quat_from_json(j["quat"]).normalized();
    if (j.contains("lin_vel")) o.lin_vel = vec3_from_json(j["lin_vel"]);
    if (j.contains("ang_vel")) o.ang_vel = vec3_from_json(j["ang_vel"]);
    o.validate();
    return o;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("object JSON: ") + e.what());
  }
}

RigidObject ycb_object(const std::string& id) {
  RigidObject o;
  o.name = id;
  if (id == "chef_can") {
    o.shape = CylinderShape{0.051, 0.139};
    o.mass = 0.4;
  } else if (id == "tomato_can") {
    o.shape = CylinderShape{0.037, 0.084};
    o.mass = 0.3;
  } else if (id == "sugar_box") {
    o.shape = BoxShape{Vec3(0.022, 0.045, 0.088)};
    o.mass = 0.5;
  } else {
    throw ConfigError("unknown object id: " + id);
  }
  o.inertia = RigidObject::solid_inertia(o.shape, o.mass);
  return o;
}

}  // namespace exohand
