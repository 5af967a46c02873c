#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "rvo/error.hpp"
#include "rvo/geometry/types.hpp"

namespace rvo {

inline constexpr double kParallelRayTolerance = 1e-6;

/// Midpoint triangulation of two pixel observations. Poses map world to camera.
/// Throws DegenerateBaseline when the centers coincide or the rays are
/// parallel within kParallelRayTolerance radians.
inline Point3 triangulate(const Pose& pose_a, const Pose& pose_b, const Vec2& obs_a,
                          const Vec2& obs_b, const CameraIntrinsics& intrinsics) {
  const Vec3 ca = pose_a.center();
  const Vec3 cb = pose_b.center();
  const Vec3 baseline = cb - ca;
  if (baseline.norm() < 1e-12) throw Error(ErrorCode::DegenerateBaseline, "camera centers coincide");

  const Vec3 da = pose_a.rotation.transpose() * intrinsics.bearing(obs_a);
  const Vec3 db = pose_b.rotation.transpose() * intrinsics.bearing(obs_b);
  const double sin_angle = da.cross(db).norm();
  if (sin_angle < kParallelRayTolerance) throw Error(ErrorCode::DegenerateBaseline, "rays are parallel");

  // Closest points ca + la*da and cb + lb*db.
  const double ab = da.dot(db);
  const double denom = 1.0 - ab * ab;
  const double pa = da.dot(baseline);
  const double pb = db.dot(baseline);
  const double la = (pa - ab * pb) / denom;
  const double lb = (ab * pa - pb) / denom;
  return 0.5 * ((ca + la * da) + (cb + lb * db));
}

/// Angle between the two viewing rays of a world point.
inline double parallax_angle(const Vec3& center_a, const Vec3& center_b, const Point3& p) {
  const Vec3 ra = (p - center_a).normalized();
  const Vec3 rb = (p - center_b).normalized();
  return std::acos(std::clamp(ra.dot(rb), -1.0, 1.0));
}

/// Reprojection error in pixels, or +inf when the point is behind the camera.
inline double reprojection_error(const Pose& world_to_camera, const Point3& p, const Vec2& pixel,
                                 const CameraIntrinsics& intrinsics) {
  const Vec3 pc = world_to_camera * p;
  if (pc.z() <= 0.0) return std::numeric_limits<double>::infinity();
  return (intrinsics.project(pc) - pixel).norm();
}

}  // namespace rvo
