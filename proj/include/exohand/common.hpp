#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace exohand {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;
using json = nlohmann::json;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class ParseError : public Error {
 public:
  using Error::Error;
};
class ValidationError : public Error {
 public:
  using Error::Error;
};
class UsageError : public Error {
 public:
  using Error::Error;
};
class StepError : public Error {
 public:
  using Error::Error;
};
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Seeded random source with portable sampling.
///
/// std::mt19937_64 is fully specified by the standard; the distribution
/// classes are not, so uniform and normal draws are derived here directly
/// from the raw 64-bit output to keep streams identical across toolchains.
class Rng {
 public:
  Rng() : engine_(0) {}
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  void seed(std::uint64_t s) {
    engine_.seed(s);
    has_spare_ = false;
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, polar-free form).
  double normal();

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Hex SHA-256 of the raw bytes of a double array.
std::string sha256_hex(std::span<const double> values);

json to_json(const Vec& v);
Vec vec_from_json(const json& j);
json to_json(const Vec3& v);
Vec3 vec3_from_json(const json& j);
/// Quaternion as [w, x, y, z].
json to_json(const Quat& q);
Quat quat_from_json(const json& j);

/// Rotation vector (axis * angle) of a unit quaternion.
Vec3 rotation_vector(const Quat& q);
/// Unit quaternion from a rotation vector.
Quat quat_from_rotation_vector(const Vec3& rv);

/// Reads a whole file; throws ConfigError when missing.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

bool all_finite(const Vec& v);

}  // namespace exohand
