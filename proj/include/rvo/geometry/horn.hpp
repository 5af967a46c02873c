#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "rvo/error.hpp"
#include "rvo/geometry/types.hpp"
#include "rvo/rng.hpp"
#include "rvo/stats.hpp"

namespace rvo {

/// Corresponded points: `target` is expected to equal s R `source` + T.
struct PointPair {
  Point3 source;
  Point3 target;
};

/// Closed-form similarity aligning source to target.
///
/// Rotation comes from the SVD of the cross-covariance of the centered sets
/// (reflections are repaired by flipping the smallest singular direction);
/// scale is the ratio of RMS dispersions about the centroids, which is
/// symmetric in the two sets; translation maps the source centroid onto the
/// target centroid. Throws DegenerateConfiguration for fewer than three pairs
/// or collinear/coincident source points.
inline Sim3 horn_align(std::span<const PointPair> pairs) {
  if (pairs.size() < 3) throw Error(ErrorCode::DegenerateConfiguration, "need at least 3 point pairs");
  const double n = static_cast<double>(pairs.size());
  Vec3 cs = Vec3::Zero(), ct = Vec3::Zero();
  for (const auto& p : pairs) {
    cs += p.source;
    ct += p.target;
  }
  cs /= n;
  ct /= n;

  Mat3 cross = Mat3::Zero();
  Mat3 spread = Mat3::Zero();
  double ss = 0.0, st = 0.0;
  for (const auto& p : pairs) {
    const Vec3 a = p.source - cs;
    const Vec3 b = p.target - ct;
    cross.noalias() += b * a.transpose();
    spread.noalias() += a * a.transpose();
    ss += a.squaredNorm();
    st += b.squaredNorm();
  }
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(spread);
  const Vec3 ev = eig.eigenvalues();  // ascending
  if (ss <= 1e-300 || ev(1) <= 1e-12 * ev(2))
    throw Error(ErrorCode::DegenerateConfiguration, "source points are collinear or coincident");

  const Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  Sim3 s;
  s.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  s.scale = std::sqrt(st / ss);
  s.translation = ct - s.scale * (s.rotation * cs);
  return s;
}

/// Median distance of `points` to their centroid, used to scale thresholds.
inline double median_centroid_distance(std::span<const Point3> points) {
  if (points.empty()) return 0.0;
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  c /= static_cast<double>(points.size());
  std::vector<double> d;
  d.reserve(points.size());
  for (const auto& p : points) d.push_back((p - c).norm());
  return median(std::move(d));
}

struct RansacSim3Options {
  double inlier_threshold = 0.05;  // world units, on |target - S(source)|
  int max_iterations = 1000;
  double confidence = 0.999;
  double min_inlier_fraction = 0.0;
  std::uint64_t seed = 0;
};

struct RansacSim3Result {
  Sim3 transform;
  std::vector<bool> inliers;
  int inlier_count = 0;
  int iterations = 0;
  double inlier_rms = 0.0;
};

/// Ransac over minimal three-point Horn fits, refit on the consensus set.
///
/// Pairs are visited in a canonical (lexicographic) order before sampling,
/// so for a fixed seed the estimate does not depend on the order of the
/// input list; the returned flags follow the caller's order. The iteration
/// budget shrinks with the best inlier ratio seen so far. Throws NoConsensus
/// when fewer than three pairs (or fewer than the minimum fraction) agree.
inline RansacSim3Result ransac_sim3(std::span<const PointPair> pairs, const RansacSim3Options& options = {}) {
  if (!(options.confidence > 0.0 && options.confidence < 1.0))
    throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0, 1)");
  const int n = static_cast<int>(pairs.size());
  if (n < 3) throw Error(ErrorCode::NoConsensus, "fewer than 3 hypotheses");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](int i) {
    const auto& p = pairs[i];
    return std::array<double, 6>{p.source.x(), p.source.y(), p.source.z(),
                                 p.target.x(), p.target.y(), p.target.z()};
  };
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });

  std::vector<PointPair> canon(n);
  for (int i = 0; i < n; ++i) canon[i] = pairs[order[i]];

  const double thr2 = options.inlier_threshold * options.inlier_threshold;
  auto evaluate = [&](const Sim3& s, std::vector<bool>& mask, double& sq) {
    int count = 0;
    sq = 0.0;
    mask.assign(n, false);
    for (int i = 0; i < n; ++i) {
      const double d2 = (canon[i].target - s * canon[i].source).squaredNorm();
      if (d2 < thr2) {
        mask[i] = true;
        ++count;
        sq += d2;
      }
    }
    return count;
  };

  Rng rng(derive_seed(options.seed, "ransac_sim3"));
  RansacSim3Result best;
  best.inlier_count = -1;
  double best_sq = 0.0;
  std::vector<bool> best_mask, mask;
  int budget = options.max_iterations;
  int it = 0;
  for (; it < budget; ++it) {
    std::array<int, 3> idx{};
    idx[0] = static_cast<int>(rng.below(n));
    do idx[1] = static_cast<int>(rng.below(n));
    while (idx[1] == idx[0]);
    do idx[2] = static_cast<int>(rng.below(n));
    while (idx[2] == idx[0] || idx[2] == idx[1]);
    const std::array<PointPair, 3> sample = {canon[idx[0]], canon[idx[1]], canon[idx[2]]};
    Sim3 s;
    try {
      s = horn_align(sample);
    } catch (const Error&) {
      continue;
    }
    double sq = 0.0;
    const int count = evaluate(s, mask, sq);
    if (count > best.inlier_count || (count == best.inlier_count && sq < best_sq)) {
      best.inlier_count = count;
      best.transform = s;
      best_sq = sq;
      best_mask = mask;
      const double w = static_cast<double>(count) / n;
      const double denom = std::log(1.0 - std::pow(w, 3.0));
      if (denom < 0.0) {
        const double needed = std::ceil(std::log(1.0 - options.confidence) / denom);
        budget = std::min(options.max_iterations, std::max(it + 1, static_cast<int>(std::min(needed, 1e9))));
      }
    }
  }

  const int min_count = std::max(3, static_cast<int>(std::ceil(options.min_inlier_fraction * n)));
  if (best.inlier_count < min_count) throw Error(ErrorCode::NoConsensus, "insufficient consensus");

  // Refit on inliers until the set stops changing.
  for (int round = 0; round < 5; ++round) {
    std::vector<PointPair> in;
    for (int i = 0; i < n; ++i)
      if (best_mask[i]) in.push_back(canon[i]);
    Sim3 refit;
    try {
      refit = horn_align(in);
    } catch (const Error&) {
      break;
    }
    double sq = 0.0;
    const int count = evaluate(refit, mask, sq);
    if (count < min_count) break;
    const bool same = mask == best_mask;
    best.transform = refit;
    best.inlier_count = count;
    best_mask = mask;
    best_sq = sq;
    if (same) break;
  }

  best.iterations = it;
  best.inliers.assign(n, false);
  for (int i = 0; i < n; ++i) best.inliers[order[i]] = best_mask[i];
  best.inlier_rms = best.inlier_count > 0 ? std::sqrt(best_sq / best.inlier_count) : 0.0;
  return best;
}

}  // namespace rvo
