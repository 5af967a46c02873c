#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>

namespace rvo {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Point3 = Eigen::Vector3d;

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Rotation for the axis-angle vector `w` (Rodrigues).
inline Mat3 so3_exp(const Vec3& w) {
  const double theta = w.norm();
  if (theta < 1e-12) return Mat3::Identity() + skew(w);
  return Eigen::AngleAxisd(theta, w / theta).toRotationMatrix();
}

inline Vec3 so3_log(const Mat3& r) {
  const Eigen::AngleAxisd aa(r);
  return aa.axis() * aa.angle();
}

inline double rotation_angle(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

/// Nearest rotation in the Frobenius sense.
inline Mat3 orthonormalize(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

namespace detail {
// V(w) = I + (1 - cos t)/t^2 W + (t - sin t)/t^3 W^2
inline Mat3 so3_left_jacobian(const Vec3& w) {
  const double theta = w.norm();
  const Mat3 k = skew(w);
  if (theta < 1e-8) return Mat3::Identity() + 0.5 * k + k * k / 6.0;
  const double t2 = theta * theta;
  return Mat3::Identity() + (1.0 - std::cos(theta)) / t2 * k + (theta - std::sin(theta)) / (t2 * theta) * k * k;
}
}  // namespace detail

/// Rigid transform x -> R x + t. Keyframe and frame poses use the
/// world-to-camera convention; trajectories use camera-to-world.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return rotation * p + translation; }
  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation * o.translation + translation};
  }
  Pose inverse() const {
    const Mat3 rt = rotation.transpose();
    return {rt, -rt * translation};
  }
  /// Camera center when the pose maps world to camera.
  Vec3 center() const { return -rotation.transpose() * translation; }

  bool is_valid(double tol = 1e-9) const {
    return rotation.allFinite() && translation.allFinite() &&
           (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(rotation.determinant() - 1.0) <= tol;
  }

  static Pose from_center(const Mat3& world_to_camera, const Vec3& center) {
    return {world_to_camera, -world_to_camera * center};
  }
};

/// Left-multiplicative update: R <- Exp(w) R, t <- Exp(w) t + rho, with
/// delta = (w, rho). Matches the Jacobians used by PnP and bundle adjustment.
inline Pose retract(const Pose& pose, const Eigen::Matrix<double, 6, 1>& delta) {
  const Mat3 dr = so3_exp(delta.head<3>());
  return {dr * pose.rotation, dr * pose.translation + delta.tail<3>()};
}

/// Exponential map with xi = (rotation vector, translational part).
inline Pose se3_exp(const Eigen::Matrix<double, 6, 1>& xi) {
  const Vec3 w = xi.head<3>();
  return {so3_exp(w), detail::so3_left_jacobian(w) * xi.tail<3>()};
}

inline Eigen::Matrix<double, 6, 1> se3_log(const Pose& pose) {
  const Vec3 w = so3_log(pose.rotation);
  Eigen::Matrix<double, 6, 1> xi;
  xi.head<3>() = w;
  xi.tail<3>() = detail::so3_left_jacobian(w).inverse() * pose.translation;
  return xi;
}

/// Pose raised to a real power along the one-parameter subgroup through it.
inline Pose pose_power(const Pose& pose, double exponent) {
  return se3_exp(se3_log(pose) * exponent);
}

/// Similarity x -> s R x + T.
struct Sim3 {
  double scale = 1.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Sim3 identity() { return {}; }

  Vec3 operator*(const Vec3& p) const { return scale * (rotation * p) + translation; }
  Sim3 operator*(const Sim3& o) const {
    return {scale * o.scale, rotation * o.rotation, scale * (rotation * o.translation) + translation};
  }
  Sim3 inverse() const {
    const Mat3 rt = rotation.transpose();
    return {1.0 / scale, rt, -(rt * translation) / scale};
  }

  /// Re-expresses a world-to-camera pose after mapping the world by this
  /// similarity. The camera center moves with the points and the camera
  /// rotation is conjugated, so projections are preserved up to the depth scale.
  Pose transform_camera(const Pose& world_to_camera) const {
    const Vec3 c = (*this) * world_to_camera.center();
    const Mat3 r = world_to_camera.rotation * rotation.transpose();
    return Pose::from_center(r, c);
  }
};

/// 256-bit binary descriptor.
struct Descriptor {
  static constexpr int kBits = 256;
  std::array<std::uint64_t, 4> words{};

  bool bit(int i) const { return (words[i >> 6] >> (i & 63)) & 1ULL; }
  void flip(int i) { words[i >> 6] ^= (1ULL << (i & 63)); }
  friend bool operator==(const Descriptor&, const Descriptor&) = default;
};

inline int hamming(const Descriptor& a, const Descriptor& b) {
  return std::popcount(a.words[0] ^ b.words[0]) + std::popcount(a.words[1] ^ b.words[1]) +
         std::popcount(a.words[2] ^ b.words[2]) + std::popcount(a.words[3] ^ b.words[3]);
}

/// Pinhole camera without distortion.
struct CameraIntrinsics {
  double focal = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  bool is_valid() const {
    return focal > 0.0 && width > 0 && height > 0 && cx >= 0.0 && cx <= width && cy >= 0.0 &&
           cy <= height;
  }
  bool contains(const Vec2& px) const {
    return px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= width && px.y() <= height;
  }
  Vec2 project(const Vec3& p_cam) const {
    return {focal * p_cam.x() / p_cam.z() + cx, focal * p_cam.y() / p_cam.z() + cy};
  }
  /// Normalized image coordinates (z = 1).
  Vec3 unproject(const Vec2& px) const {
    return {(px.x() - cx) / focal, (px.y() - cy) / focal, 1.0};
  }
  Vec3 bearing(const Vec2& px) const { return unproject(px).normalized(); }
};

using LandmarkId = std::uint64_t;

struct Observation {
  Vec2 pixel = Vec2::Zero();
  LandmarkId landmark_id = 0;  // ground truth; estimators must not read it
  Descriptor descriptor;
};

}  // namespace rvo
