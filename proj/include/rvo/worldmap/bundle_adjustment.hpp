#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "rvo/geometry/pnp.hpp"
#include "rvo/geometry/types.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo {

struct BundleAdjustOptions {
  int window = 10;  // most recent keyframes whose poses are optimized
  int max_iterations = 50;
  double initial_lambda = 1e-3;
  double min_relative_decrease = 1e-10;
  double min_mean_squared_error = 1e-14;  // px^2 per residual; stop once below
};

struct BundleAdjustReport {
  std::vector<double> costs;  // initial cost, then the cost after every accepted step
  int iterations = 0;
  int rejected_steps = 0;
  bool converged = false;
  std::size_t residuals = 0;
  std::size_t optimized_poses = 0;
  std::size_t optimized_points = 0;

  double initial_cost() const { return costs.empty() ? 0.0 : costs.front(); }
  double final_cost() const { return costs.empty() ? 0.0 : costs.back(); }
};

/// Pixel residual of one observation and its derivatives with respect to the
/// left pose increment (rotation first) and the world point.
struct ReprojectionTerm {
  Vec2 residual;
  Eigen::Matrix<double, 2, 6> d_pose;
  Eigen::Matrix<double, 2, 3> d_point;
  bool valid = false;  // point in front of the camera
};

inline ReprojectionTerm reprojection_term(const Pose& pose, const Point3& point, const Vec2& pixel,
                                          const CameraIntrinsics& k) {
  ReprojectionTerm t;
  const Vec3 pc = pose * point;
  t.valid = pc.z() > detail::kMinDepth;
  if (!t.valid) {
    t.residual = Vec2::Constant(detail::kBehindPenalty);
    t.d_pose.setZero();
    t.d_point.setZero();
    return t;
  }
  t.residual = k.project(pc) - pixel;
  const auto jp = detail::projection_jacobian(pc, k.focal);
  t.d_pose = detail::pose_jacobian(pc, k.focal);
  t.d_point = jp * pose.rotation;
  return t;
}

/// Sum of squared reprojection residuals over every observation in the map.
inline double total_reprojection_cost(const WorldMap& map, const CameraIntrinsics& k) {
  double c = 0.0;
  for (const auto& [pid, p] : map.points())
    for (const auto& [kid, f] : p.observers) {
      const KeyFrame& kf = map.keyframe(kid);
      c += reprojection_term(kf.pose, p.position, kf.features[f].pixel, k).residual.squaredNorm();
    }
  return c;
}

/// Levenberg-Marquardt over the last `window` keyframe poses and the points
/// they observe. The oldest window keyframe and any outside keyframe seeing
/// those points stay fixed; points are eliminated with a Schur complement.
/// Steps that do not lower the cost are rejected, so the cost never rises.
inline BundleAdjustReport local_bundle_adjust(WorldMap& map, const CameraIntrinsics& k,
                                              const BundleAdjustOptions& options = {}) {
  BundleAdjustReport report;
  if (map.frozen()) throw Error(ErrorCode::FrozenMap, "map is frozen");
  if (map.keyframes().empty()) return report;

  std::vector<KeyFrameId> window;
  for (auto it = map.keyframes().rbegin(); it != map.keyframes().rend() && static_cast<int>(window.size()) < options.window; ++it)
    window.push_back(it->first);
  std::reverse(window.begin(), window.end());

  std::map<KeyFrameId, int> pose_index;  // free poses only
  for (std::size_t i = 1; i < window.size(); ++i) pose_index[window[i]] = static_cast<int>(pose_index.size());

  // Points seen by the window with at least two observations.
  std::vector<MapPointId> point_ids;
  {
    std::set<MapPointId> chosen;
    for (KeyFrameId kid : window)
      for (const auto& slot : map.keyframe(kid).point_ids)
        if (slot && map.point(*slot).observers.size() >= 2) chosen.insert(*slot);
    point_ids.assign(chosen.begin(), chosen.end());
  }
  const int np = static_cast<int>(pose_index.size());
  const int nq = static_cast<int>(point_ids.size());
  report.optimized_poses = static_cast<std::size_t>(np);
  report.optimized_points = static_cast<std::size_t>(nq);
  if (nq == 0) return report;

  struct Obs {
    int point;
    int camera;
    int pose;  // -1 when the camera is held fixed
    Vec2 pixel;
  };
  std::vector<Obs> obs;
  std::vector<KeyFrameId> camera_ids;
  std::map<KeyFrameId, int> camera_index;
  std::vector<Point3> points(nq);
  std::vector<std::vector<int>> point_obs(nq);
  for (int q = 0; q < nq; ++q) {
    const MapPoint& p = map.point(point_ids[q]);
    points[q] = p.position;
    for (const auto& [kid, f] : p.observers) {
      auto [it, inserted] = camera_index.emplace(kid, static_cast<int>(camera_ids.size()));
      if (inserted) camera_ids.push_back(kid);
      const auto pi = pose_index.find(kid);
      point_obs[q].push_back(static_cast<int>(obs.size()));
      obs.push_back({q, it->second, pi == pose_index.end() ? -1 : pi->second, map.keyframe(kid).features[f].pixel});
    }
  }
  std::vector<Pose> cameras(camera_ids.size());
  for (std::size_t c = 0; c < camera_ids.size(); ++c) cameras[c] = map.keyframe(camera_ids[c]).pose;
  std::vector<int> pose_camera(np);
  for (const auto& [kid, i] : pose_index) pose_camera[i] = camera_index.count(kid) ? camera_index.at(kid) : -1;
  report.residuals = obs.size();

  auto cost_of = [&](const std::vector<Pose>& cams, const std::vector<Point3>& qs) {
    double c = 0.0;
    for (const auto& o : obs) c += reprojection_term(cams[o.camera], qs[o.point], o.pixel, k).residual.squaredNorm();
    return c;
  };

  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  using Mat63 = Eigen::Matrix<double, 6, 3>;

  double cost = cost_of(cameras, points);
  report.costs.push_back(cost);
  double lambda = options.initial_lambda;

  std::vector<ReprojectionTerm> terms(obs.size());
  std::vector<Mat63> coupling(obs.size());
  for (int it = 0; it < options.max_iterations; ++it) {
    report.iterations = it + 1;
    std::vector<Mat6> hcc(np, Mat6::Zero());
    std::vector<Vec6> gc(np, Vec6::Zero());
    std::vector<Mat3> hpp(nq, Mat3::Zero());
    std::vector<Vec3> gp(nq, Vec3::Zero());
    for (std::size_t n = 0; n < obs.size(); ++n) {
      const Obs& o = obs[n];
      ReprojectionTerm& t = terms[n];
      t = reprojection_term(cameras[o.camera], points[o.point], o.pixel, k);
      if (!t.valid) continue;
      hpp[o.point].noalias() += t.d_point.transpose() * t.d_point;
      gp[o.point].noalias() += t.d_point.transpose() * t.residual;
      if (o.pose >= 0) {
        hcc[o.pose].noalias() += t.d_pose.transpose() * t.d_pose;
        gc[o.pose].noalias() += t.d_pose.transpose() * t.residual;
        coupling[n].noalias() = t.d_pose.transpose() * t.d_point;
      }
    }
    double gnorm = 0.0;
    for (const auto& g : gc) gnorm = std::max(gnorm, g.cwiseAbs().maxCoeff());
    for (const auto& g : gp) gnorm = std::max(gnorm, g.cwiseAbs().maxCoeff());
    if (gnorm < 1e-12) {
      report.converged = true;
      break;
    }

    bool accepted = false;
    while (!accepted && lambda < 1e16) {
      std::vector<Mat3> hpp_inv(nq);
      for (int q = 0; q < nq; ++q) {
        Mat3 d = hpp[q];
        d.diagonal() += lambda * hpp[q].diagonal().cwiseMax(1e-9);
        hpp_inv[q] = d.inverse();
      }
      Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(6 * np, 6 * np);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(6 * np);
      for (int i = 0; i < np; ++i) {
        Mat6 d = hcc[i];
        d.diagonal() += lambda * hcc[i].diagonal().cwiseMax(1e-9);
        sys.block<6, 6>(6 * i, 6 * i) = d;
        rhs.segment<6>(6 * i) = -gc[i];
      }
      for (int q = 0; q < nq; ++q) {
        const auto& list = point_obs[q];
        for (std::size_t x = 0; x < list.size(); ++x) {
          const Obs& ox = obs[list[x]];
          if (ox.pose < 0 || !terms[list[x]].valid) continue;
          const Mat63 wx = coupling[list[x]] * hpp_inv[q];
          rhs.segment<6>(6 * ox.pose).noalias() += wx * gp[q];
          for (std::size_t y = x; y < list.size(); ++y) {
            const Obs& oy = obs[list[y]];
            if (oy.pose < 0 || !terms[list[y]].valid) continue;
            const Mat6 block = wx * coupling[list[y]].transpose();
            sys.block<6, 6>(6 * ox.pose, 6 * oy.pose) -= block;
            if (oy.pose != ox.pose) sys.block<6, 6>(6 * oy.pose, 6 * ox.pose) -= block.transpose();
          }
        }
      }
      const Eigen::VectorXd dc = np > 0 ? Eigen::VectorXd(sys.ldlt().solve(rhs)) : Eigen::VectorXd();

      std::vector<Pose> cand_cameras = cameras;
      for (int i = 0; i < np; ++i)
        if (pose_camera[i] >= 0) cand_cameras[pose_camera[i]] = retract(cameras[pose_camera[i]], dc.segment<6>(6 * i));
      std::vector<Point3> cand_points(nq);
      for (int q = 0; q < nq; ++q) {
        Vec3 r = -gp[q];
        for (int n : point_obs[q])
          if (obs[n].pose >= 0 && terms[n].valid) r.noalias() -= coupling[n].transpose() * dc.segment<6>(6 * obs[n].pose);
        cand_points[q] = points[q] + hpp_inv[q] * r;
      }
      const double new_cost = cost_of(cand_cameras, cand_points);
      if (std::isfinite(new_cost) && new_cost < cost) {
        const double rel = (cost - new_cost) / std::max(cost, 1e-300);
        cameras = std::move(cand_cameras);
        points = std::move(cand_points);
        cost = new_cost;
        report.costs.push_back(cost);
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (rel < options.min_relative_decrease ||
            cost < options.min_mean_squared_error * static_cast<double>(obs.size()))
          report.converged = true;
      } else {
        lambda *= 10.0;
        ++report.rejected_steps;
      }
    }
    if (!accepted) {
      report.converged = true;  // no descent direction left at any damping
      break;
    }
    if (report.converged) break;
  }

  for (int i = 0; i < np; ++i) {
    if (pose_camera[i] < 0) continue;
    Pose p = cameras[pose_camera[i]];
    p.rotation = orthonormalize(p.rotation);
    map.set_pose(camera_ids[pose_camera[i]], p);
  }
  for (int q = 0; q < nq; ++q) map.set_position(point_ids[q], points[q]);
  return report;
}

/// Unlinks observations whose reprojection error exceeds `max_error` px or
/// that lie behind their camera; returns how many were removed.
inline std::size_t cull_observations(WorldMap& map, const CameraIntrinsics& k, double max_error,
                                     std::span<const KeyFrameId> keyframes) {
  std::size_t removed = 0;
  for (KeyFrameId kid : keyframes) {
    if (!map.has_keyframe(kid)) continue;
    const KeyFrame& kf = map.keyframe(kid);
    std::vector<std::size_t> bad;
    for (std::size_t f = 0; f < kf.point_ids.size(); ++f) {
      if (!kf.point_ids[f]) continue;
      const auto t = reprojection_term(kf.pose, map.point(*kf.point_ids[f]).position, kf.features[f].pixel, k);
      if (!t.valid || t.residual.norm() > max_error) bad.push_back(f);
    }
    for (std::size_t f : bad) map.remove_observation(kid, f);
    removed += bad.size();
  }
  return removed;
}

}  // namespace rvo
