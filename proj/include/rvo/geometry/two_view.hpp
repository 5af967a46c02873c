#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "rvo/error.hpp"
#include "rvo/geometry/triangulation.hpp"
#include "rvo/geometry/types.hpp"
#include "rvo/rng.hpp"
#include "rvo/stats.hpp"

namespace rvo {

struct PixelPair {
  Vec2 a;
  Vec2 b;
};

struct TwoViewOptions {
  double min_parallax = 1.0 * M_PI / 180.0;  // rad, median over triangulated points
  double sampson_threshold = 2.0;            // px
  double reprojection_threshold = 4.0;       // px, for accepting triangulated points
  int ransac_iterations = 200;
  std::uint64_t seed = 0;
};

struct TwoViewResult {
  Pose relative;  // maps view-a coordinates to view-b; |t| = 1
  std::vector<Point3> points;
  std::vector<int> point_pair;  // index into the input pairs for each point
  std::vector<bool> inliers;    // epipolar inliers
  double median_parallax = 0.0;
};

namespace detail {

/// Linear eight-point estimate on (pre-normalized) coordinates.
inline Mat3 eight_point(std::span<const Vec3> xa, std::span<const Vec3> xb, std::span<const int> idx) {
  // Hartley conditioning.
  auto conditioner = [&](std::span<const Vec3> x) {
    Vec2 c = Vec2::Zero();
    for (int i : idx) c += x[i].head<2>();
    c /= static_cast<double>(idx.size());
    double d = 0.0;
    for (int i : idx) d += (x[i].head<2>() - c).norm();
    d /= static_cast<double>(idx.size());
    const double s = d > 1e-15 ? std::sqrt(2.0) / d : 1.0;
    Mat3 t;
    t << s, 0.0, -s * c.x(), 0.0, s, -s * c.y(), 0.0, 0.0, 1.0;
    return t;
  };
  const Mat3 ta = conditioner(xa);
  const Mat3 tb = conditioner(xb);

  Eigen::MatrixXd a(idx.size(), 9);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Vec3 pa = ta * xa[idx[r]];
    const Vec3 pb = tb * xb[idx[r]];
    a.row(static_cast<Eigen::Index>(r)) << pb.x() * pa.x(), pb.x() * pa.y(), pb.x(), pb.y() * pa.x(),
        pb.y() * pa.y(), pb.y(), pa.x(), pa.y(), 1.0;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 em;
  em << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  em = tb.transpose() * em * ta;

  // Project onto the essential manifold (singular values 1, 1, 0).
  const Eigen::JacobiSVD<Mat3> s2(em, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return s2.matrixU() * Eigen::Vector3d(1.0, 1.0, 0.0).asDiagonal() * s2.matrixV().transpose();
}

/// Sampson distance (normalized units) of xb^T E xa = 0.
inline double sampson(const Mat3& e, const Vec3& xa, const Vec3& xb) {
  const Vec3 ea = e * xa;
  const Vec3 eb = e.transpose() * xb;
  const double num = xb.dot(ea);
  const double den = ea.x() * ea.x() + ea.y() * ea.y() + eb.x() * eb.x() + eb.y() * eb.y();
  return den > 0.0 ? std::sqrt(num * num / den) : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Relative pose and structure from two uncalibrated-scale views: RANSAC over
/// the normalized eight-point essential estimate, cheirality disambiguation of
/// the four decompositions, then midpoint triangulation. Translation has unit
/// norm. Throws InsufficientMatches (< 8 pairs) and InsufficientParallax.
inline TwoViewResult two_view_init(std::span<const PixelPair> pairs, const CameraIntrinsics& intrinsics,
                                   const TwoViewOptions& options = {}) {
  const int n = static_cast<int>(pairs.size());
  if (n < 8) throw Error(ErrorCode::InsufficientMatches, "two-view initialization needs 8 correspondences");

  std::vector<Vec3> xa(n), xb(n);
  for (int i = 0; i < n; ++i) {
    xa[i] = intrinsics.unproject(pairs[i].a);
    xb[i] = intrinsics.unproject(pairs[i].b);
  }
  const double thr = options.sampson_threshold / intrinsics.focal;

  auto score = [&](const Mat3& e, std::vector<bool>& mask) {
    int count = 0;
    double cost = 0.0;
    mask.assign(n, false);
    for (int i = 0; i < n; ++i) {
      const double d = detail::sampson(e, xa[i], xb[i]);
      if (d < thr) {
        mask[i] = true;
        ++count;
        cost += d * d;
      } else {
        cost += thr * thr;
      }
    }
    return std::pair{count, cost};
  };

  Rng rng(derive_seed(options.seed, "two_view"));
  Mat3 best_e = Mat3::Zero();
  std::vector<bool> best_mask, mask;
  int best_count = -1;
  double best_cost = 0.0;
  std::vector<int> all(n);
  for (int i = 0; i < n; ++i) all[i] = i;
  const int iterations = n == 8 ? 1 : options.ransac_iterations;
  for (int it = 0; it < iterations; ++it) {
    std::array<int, 8> sample{};
    if (n == 8) {
      std::copy(all.begin(), all.end(), sample.begin());
    } else {
      for (int s = 0; s < 8; ++s) {
        int c = 0;
        do {
          c = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        } while (std::find(sample.begin(), sample.begin() + s, c) != sample.begin() + s);
        sample[s] = c;
      }
    }
    const Mat3 e = detail::eight_point(xa, xb, sample);
    const auto [count, cost] = score(e, mask);
    if (count > best_count || (count == best_count && cost < best_cost)) {
      best_count = count;
      best_cost = cost;
      best_e = e;
      best_mask = mask;
    }
  }
  // Refit on the consensus set.
  std::vector<int> inlier_idx;
  for (int i = 0; i < n; ++i)
    if (best_mask[i]) inlier_idx.push_back(i);
  if (inlier_idx.size() < 8) throw Error(ErrorCode::InsufficientMatches, "too few epipolar inliers");
  {
    const Mat3 e = detail::eight_point(xa, xb, inlier_idx);
    const auto [count, cost] = score(e, mask);
    if (count >= best_count) {
      best_e = e;
      best_mask = mask;
      inlier_idx.clear();
      for (int i = 0; i < n; ++i)
        if (best_mask[i]) inlier_idx.push_back(i);
    }
  }

  // Four candidate decompositions.
  const Eigen::JacobiSVD<Mat3> svd(best_e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0) u.col(2) *= -1.0;
  if (v.determinant() < 0) v.col(2) *= -1.0;
  Mat3 w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const std::array<Mat3, 2> rotations = {u * w * v.transpose(), u * w.transpose() * v.transpose()};
  const Vec3 t = u.col(2);

  struct Candidate {
    Pose pose;
    std::vector<Point3> points;
    std::vector<int> idx;
    std::vector<double> parallax;
  };
  std::vector<Candidate> candidates;
  for (const Mat3& r : rotations) {
    for (double sign : {1.0, -1.0}) {
      Candidate c;
      c.pose = Pose{r, sign * t};
      const Pose origin = Pose::identity();
      const Vec3 cb = c.pose.center();
      for (int i : inlier_idx) {
        Point3 p;
        try {
          p = triangulate(origin, c.pose, pairs[i].a, pairs[i].b, intrinsics);
        } catch (const Error&) {
          continue;
        }
        if (!p.allFinite() || p.z() <= 0.0 || (c.pose * p).z() <= 0.0) continue;
        if (reprojection_error(origin, p, pairs[i].a, intrinsics) > options.reprojection_threshold ||
            reprojection_error(c.pose, p, pairs[i].b, intrinsics) > options.reprojection_threshold)
          continue;
        c.points.push_back(p);
        c.idx.push_back(i);
        c.parallax.push_back(parallax_angle(Vec3::Zero(), cb, p));
      }
      candidates.push_back(std::move(c));
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& x, const Candidate& y) { return x.points.size() > y.points.size(); });
  Candidate& best = candidates.front();
  if (best.points.size() < 8)
    throw Error(ErrorCode::InsufficientParallax, "no decomposition triangulates enough points");
  // Demand a clear cheirality winner; otherwise the geometry is ambiguous.
  if (candidates[1].points.size() > 0.7 * best.points.size())
    throw Error(ErrorCode::InsufficientParallax, "ambiguous decomposition");

  TwoViewResult result;
  result.median_parallax = median(best.parallax);
  if (result.median_parallax < options.min_parallax)
    throw Error(ErrorCode::InsufficientParallax, "median parallax below threshold");
  result.relative = best.pose;
  result.points = std::move(best.points);
  result.point_pair = std::move(best.idx);
  result.inliers = std::move(best_mask);
  return result;
}

}  // namespace rvo
