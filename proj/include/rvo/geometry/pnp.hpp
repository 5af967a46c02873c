#pragma once

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "rvo/error.hpp"
#include "rvo/geometry/types.hpp"
#include "rvo/stats.hpp"

namespace rvo {

struct PnpMatch {
  Point3 point;
  Vec2 pixel;
};

struct PnpOptions {
  double inlier_threshold = 2.0;  // px
  int max_iterations = 100;       // per refinement stage
  /// Scale the inlier threshold to the residual spread (median-based) when it
  /// exceeds the fixed threshold. Used by exhaustive-matching recovery.
  bool adaptive_threshold = false;
  double adaptive_sigmas = 3.0;
};

struct PnpResult {
  Pose pose;
  std::vector<bool> inliers;
  int inlier_count = 0;
  double inlier_rms = 0.0;
  double threshold = 0.0;
  /// Cost after every accepted step of the robust (Huber) stage and of the
  /// final least-squares round on the inliers.
  std::vector<double> robust_costs;
  std::vector<double> refine_costs;
  int iterations = 0;
};

namespace detail {

using Mat26 = Eigen::Matrix<double, 2, 6>;
using Mat66 = Eigen::Matrix<double, 6, 6>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr double kMinDepth = 1e-6;
inline constexpr double kBehindPenalty = 1e4;  // px, charged for points behind the camera

/// d(pixel)/d(camera point).
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const Vec3& pc, double focal) {
  const double iz = 1.0 / pc.z();
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 2, 3> j;
  j << focal * iz, 0.0, -focal * pc.x() * iz2, 0.0, focal * iz, -focal * pc.y() * iz2;
  return j;
}

/// d(pixel)/d(delta) for the left-multiplicative pose update of `retract`.
inline Mat26 pose_jacobian(const Vec3& pc, double focal) {
  Eigen::Matrix<double, 3, 6> dpc;
  dpc.leftCols<3>() = -skew(pc);
  dpc.rightCols<3>() = Mat3::Identity();
  return projection_jacobian(pc, focal) * dpc;
}

inline double huber(double e, double delta) {
  return e <= delta ? e * e : 2.0 * delta * e - delta * delta;
}

/// Levenberg-Marquardt over a single pose. `delta` <= 0 means plain least
/// squares; otherwise Huber with that width. Returns the number of iterations
/// and appends the cost after each accepted step.
inline int refine_pose(Pose& pose, std::span<const PnpMatch> matches, const std::vector<bool>& active,
                       const CameraIntrinsics& k, double delta, int max_iterations,
                       std::vector<double>& costs, double& last_rel_decrease) {
  auto residual_cost = [&](const Pose& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (!active[i]) continue;
      const Vec3 pc = p * matches[i].point;
      const double e = pc.z() <= kMinDepth ? kBehindPenalty : (k.project(pc) - matches[i].pixel).norm();
      c += delta > 0.0 ? huber(e, delta) : e * e;
    }
    return c;
  };

  double cost = residual_cost(pose);
  double lambda = 1e-3;
  last_rel_decrease = 0.0;
  int it = 0;
  for (; it < max_iterations; ++it) {
    Mat66 h = Mat66::Zero();
    Vec6 g = Vec6::Zero();
    for (std::size_t i = 0; i < matches.size(); ++i) {
      if (!active[i]) continue;
      const Vec3 pc = pose * matches[i].point;
      if (pc.z() <= kMinDepth) continue;
      const Vec2 r = k.project(pc) - matches[i].pixel;
      const double e = r.norm();
      const double w = (delta > 0.0 && e > delta) ? delta / e : 1.0;
      const Mat26 j = pose_jacobian(pc, k.focal);
      h.noalias() += w * j.transpose() * j;
      g.noalias() += w * j.transpose() * r;
    }
    if (g.norm() < 1e-12) break;

    bool accepted = false;
    while (lambda < 1e12) {
      Mat66 damped = h;
      damped.diagonal() += lambda * h.diagonal().cwiseMax(1e-9);
      const Vec6 step = damped.ldlt().solve(-g);
      const Pose candidate = retract(pose, step);
      const double new_cost = residual_cost(candidate);
      if (std::isfinite(new_cost) && new_cost < cost) {
        last_rel_decrease = (cost - new_cost) / std::max(cost, 1e-300);
        pose = candidate;
        cost = new_cost;
        costs.push_back(cost);
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (step.norm() < 1e-12) last_rel_decrease = 0.0;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted || last_rel_decrease < 1e-12) {
      if (!accepted) last_rel_decrease = 0.0;
      ++it;
      break;
    }
  }
  return it;
}

}  // namespace detail

/// Refines a camera pose (world to camera) from 3D-2D matches starting at
/// `initial`: a Huber-weighted pass over all matches, inlier selection, then
/// least squares over the inliers. Throws InsufficientMatches with fewer than
/// four matches and NoConvergence when the refinement diverges.
inline PnpResult estimate_pose_pnp(std::span<const PnpMatch> matches, const CameraIntrinsics& intrinsics,
                                   const Pose& initial, const PnpOptions& options = {}) {
  if (matches.size() < 4) throw Error(ErrorCode::InsufficientMatches, "PnP needs at least 4 matches");
  if (!initial.rotation.allFinite() || !initial.translation.allFinite())
    throw Error(ErrorCode::InvalidArgument, "initial pose is not finite");

  PnpResult result;
  result.pose = initial;
  std::vector<bool> active(matches.size(), true);
  double rel = 0.0;
  result.iterations += detail::refine_pose(result.pose, matches, active, intrinsics, options.inlier_threshold,
                                           options.max_iterations, result.robust_costs, rel);
  const bool robust_stalled = result.iterations >= options.max_iterations && rel > 1e-3;

  auto errors_for = [&](const Pose& p) {
    std::vector<double> e(matches.size());
    for (std::size_t i = 0; i < matches.size(); ++i) {
      const Vec3 pc = p * matches[i].point;
      e[i] = pc.z() <= detail::kMinDepth ? std::numeric_limits<double>::infinity()
                                         : (intrinsics.project(pc) - matches[i].pixel).norm();
    }
    return e;
  };

  std::vector<double> errors = errors_for(result.pose);
  result.threshold = options.inlier_threshold;
  if (options.adaptive_threshold) {
    // Median of a 2D isotropic Gaussian residual norm is sigma * sqrt(2 ln 2).
    const double sigma = median(errors) / 1.1774100225154747;
    if (std::isfinite(sigma)) result.threshold = std::max(result.threshold, options.adaptive_sigmas * sigma);
  }
  // Least squares on the inlier set, re-selected until it stops changing.
  bool refine_stalled = false;
  for (int round = 0; round < 4; ++round) {
    int count = 0;
    std::vector<bool> next(matches.size());
    for (std::size_t i = 0; i < matches.size(); ++i) {
      next[i] = errors[i] < result.threshold;
      count += next[i] ? 1 : 0;
    }
    if (count < 4 || (round > 0 && next == active)) break;
    active = std::move(next);
    result.refine_costs.clear();
    const int before = result.iterations;
    result.iterations += detail::refine_pose(result.pose, matches, active, intrinsics, 0.0, options.max_iterations,
                                             result.refine_costs, rel);
    refine_stalled = result.iterations - before >= options.max_iterations && rel > 1e-3;
    errors = errors_for(result.pose);
  }

  if (!result.pose.rotation.allFinite() || !result.pose.translation.allFinite() || robust_stalled ||
      refine_stalled)
    throw Error(ErrorCode::NoConvergence, "pose refinement did not converge");
  result.pose.rotation = orthonormalize(result.pose.rotation);

  errors = errors_for(result.pose);
  result.inliers.assign(matches.size(), false);
  double sq = 0.0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (errors[i] < result.threshold) {
      result.inliers[i] = true;
      ++result.inlier_count;
      sq += errors[i] * errors[i];
    }
  }
  result.inlier_rms = result.inlier_count > 0 ? std::sqrt(sq / result.inlier_count) : 0.0;
  return result;
}

}  // namespace rvo
