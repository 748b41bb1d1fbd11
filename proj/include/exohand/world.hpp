#pragma once

// Primitive rigid objects, compliant penalty contact with regularized
// Coulomb friction, and Newton-Euler integration of the object.

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "exohand/common.hpp"

namespace exohand {

/// Solid cylinder with its axis along the body z axis, centred at the origin.
struct CylinderShape {
  double radius = 0.0;
  double height = 0.0;
  bool operator==(const CylinderShape&) const = default;
};

/// Solid box centred at the origin.
struct BoxShape {
  Vec3 half_extents = Vec3::Zero();
  bool operator==(const BoxShape&) const = default;
};

using Shape = std::variant<CylinderShape, BoxShape>;

struct RigidObject {
  std::string name;
  Shape shape;
  double mass = 1.0;                       // kg
  Vec3 inertia = Vec3::Ones();             // body-frame diagonal, kg m^2
  Vec3 pos = Vec3::Zero();                 // m
  Quat quat = Quat::Identity();            // body-to-world
  Vec3 lin_vel = Vec3::Zero();             // m/s, world
  Vec3 ang_vel = Vec3::Zero();             // rad/s, world

  void validate() const;
  /// Solid-body inertia of the shape at the current mass.
  static Vec3 solid_inertia(const Shape& shape, double mass);
  /// Lowest body-frame z of the shape (for placing it on a support plane).
  double half_height() const;
};

struct ContactParams {
  double stiffness = 5000.0;     // N/m
  double damping = 5.0;          // N s/m
  double friction = 1.0;         // Coulomb coefficient
  double reg_velocity = 0.02;    // m/s, slip speed at which friction saturates

  void validate() const;
};

/// A contact site on the hand.
struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
  Vec3 velocity = Vec3::Zero();
  int site = -1;
};

struct ContactPoint {
  Vec3 position = Vec3::Zero();   // on the object surface
  Vec3 normal = Vec3::UnitZ();    // unit, from the object toward the site
  double depth = 0.0;             // >= 0
  Vec3 rel_velocity = Vec3::Zero();  // site velocity minus object point velocity
  int site = -1;
};

struct ContactForce {
  Vec3 position = Vec3::Zero();
  Vec3 on_object = Vec3::Zero();  // the site receives the negation
  double normal_force = 0.0;
  double tangential_force = 0.0;
  int site = -1;
};

/// A force applied at a world point.
struct AppliedForce {
  Vec3 point = Vec3::Zero();
  Vec3 force = Vec3::Zero();
};

struct SupportPlane {
  double height = 0.0;
  ContactParams params{};
  bool enabled = true;
};

/// Closest-point query between a sphere centre and the solid shape.
/// Returns the surface point, outward normal and signed distance from the
/// surface to `p` (negative when `p` is inside), all in world frame.
struct SurfaceQuery {
  Vec3 point;
  Vec3 normal;
  double distance;
};
SurfaceQuery closest_surface_point(const RigidObject& object, const Vec3& p);

/// One contact per penetrating sphere.
std::vector<ContactPoint> detect_contacts(std::span<const Sphere> spheres,
                                          const RigidObject& object);

/// Normal: f_n = max(0, k d - c v_n). Tangential: opposes slip with
/// magnitude mu f_n min(1, |v_t| / v_reg).
std::vector<ContactForce> contact_forces(std::span<const ContactPoint> contacts,
                                         const ContactParams& params);

/// Contacts between the object's sample points (box corners, cylinder rims)
/// and a horizontal support plane.
std::vector<ContactPoint> detect_plane_contacts(const RigidObject& object,
                                                const SupportPlane& plane);

/// Semi-implicit Newton-Euler step; the quaternion is renormalized.
/// Throws StepError on non-finite forces.
RigidObject object_step(const RigidObject& object,
                        std::span<const AppliedForce> forces,
                        const Vec3& gravity, double dt);

/// Geodesic angle between two orientations, in [0, pi].
double orientation_angle(const Quat& q1, const Quat& q2);

/// Centre height of an upright object resting in equilibrium on the plane.
double resting_height(const RigidObject& object, const SupportPlane& plane,
                      const Vec3& gravity);

json object_to_json(const RigidObject& object);
RigidObject object_from_json(const json& j);
json contact_params_to_json(const ContactParams& p);
ContactParams contact_params_from_json(const json& j);

/// Approximate YCB stand-ins: "chef_can", "tomato_can", "sugar_box".
RigidObject ycb_object(const std::string& id);

}  // namespace exohand
