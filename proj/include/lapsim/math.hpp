#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <stdexcept>
#include <string>

namespace lapsim {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

/// Raised on malformed input files and inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when the solver hits a non-finite state; carries the frame context.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Cofactor matrix of M. For invertible M this equals det(M) * M^{-T},
/// but the cross-product form stays finite for singular and inverted M.
inline Mat3 cofactor(const Mat3& m) {
  Mat3 c;
  c.col(0) = m.col(1).cross(m.col(2));
  c.col(1) = m.col(2).cross(m.col(0));
  c.col(2) = m.col(0).cross(m.col(1));
  return c;
}

/// Closest point on segment [a,b] to p.
inline Vec3 closest_point_on_segment(const Vec3& a, const Vec3& b, const Vec3& p) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 < 1e-24) return a;
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return a + t * ab;
}

/// Any unit vector orthogonal to d (|d| > 0 assumed).
inline Vec3 any_perpendicular(const Vec3& d) {
  const Vec3 axis = std::abs(d.x()) < std::abs(d.z()) ? Vec3::UnitX() : Vec3::UnitZ();
  return d.cross(axis).normalized();
}

}  // namespace lapsim
