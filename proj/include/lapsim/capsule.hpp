#pragma once

#include "lapsim/math.hpp"

namespace lapsim {

/// Capsule: all points within `radius` of the segment [a, b].
struct Capsule {
  Vec3 a = Vec3::Zero();
  Vec3 b = Vec3::Zero();
  double radius = 0.0;
};

/// Signed distance, negative inside.
inline double capsule_sdf(const Capsule& c, const Vec3& p) {
  return (p - closest_point_on_segment(c.a, c.b, p)).norm() - c.radius;
}

/// Unit outward gradient. Exactly on the axis the direction is ambiguous;
/// returns an arbitrary unit vector perpendicular to the axis so projection
/// still pushes the point out.
inline Vec3 capsule_sdf_gradient(const Capsule& c, const Vec3& p) {
  const Vec3 d = p - closest_point_on_segment(c.a, c.b, p);
  const double len = d.norm();
  if (len < 1e-12) return any_perpendicular(c.b - c.a);
  return d / len;
}

}  // namespace lapsim
