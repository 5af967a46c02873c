#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <vector>

#include "rvo/frame.hpp"
#include "rvo/geometry/pnp.hpp"
#include "rvo/geometry/triangulation.hpp"
#include "rvo/tracker/matcher.hpp"
#include "rvo/worldmap/bundle_adjustment.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo {

struct TrackerConfig {
  int min_inliers = 15;           // below this a frame is lost
  double search_radius = 15.0;    // px, around the predicted projection
  double fallback_radius = 30.0;  // px, retried once when the first search fails (0 disables)
  double refine_radius = 5.0;     // px, second association pass after the first pose (0 disables)
  int max_hamming = 64;
  int keyframe_gap = 5;
  double refresh_fraction = 0.9;
  double pnp_threshold = 2.0;     // px
  int local_keyframes = 10;       // keyframes whose points form the local map
  int triangulation_neighbors = 2;
  double triangulation_max_error = 2.0;                  // px, in both views
  double min_triangulation_parallax = 1.0 * M_PI / 180;  // rad
  double cull_error = 3.0;        // px, after bundle adjustment
  BundleAdjustOptions bundle_adjust{.min_relative_decrease = 1e-6};
};

enum class TrackMode { uninitialized, tracking, lost };

struct TrackerState {
  TrackMode mode = TrackMode::uninitialized;
  /// Per-frame relative motion T_k * T_{k-1}^-1. Kept while lost so a short
  /// dropout can be bridged by extrapolation.
  std::optional<Pose> motion;
  Pose pose;              // last tracked world-to-camera pose
  int frame_index = -1;   // frame of `pose`
  int frames_since_keyframe = 0;
  std::size_t reference_count = 0;  // inliers of the frame that became the reference keyframe
  int lost_streak = 0;
};

struct TrackResult {
  bool tracked = false;
  Pose pose;
  int matched = 0;  // descriptor associations before pose estimation
  int inliers = 0;
  std::vector<std::pair<std::size_t, MapPointId>> associations;  // (observation index, point) inliers
};

namespace detail {

inline std::vector<MapPointId> local_map_points(const WorldMap& map, int keyframes) {
  std::set<MapPointId> ids;
  int n = 0;
  for (auto it = map.keyframes().rbegin(); it != map.keyframes().rend() && n < keyframes; ++it, ++n)
    for (const auto& slot : it->second.point_ids)
      if (slot) ids.insert(*slot);
  return {ids.begin(), ids.end()};
}

/// Projected search: each local point is compared with observations within
/// `radius` px of its projection under `pose`; pairs are kept when mutually best.
inline std::vector<DescriptorMatch> project_and_match(const WorldMap& map, std::span<const MapPointId> points,
                                                      const Frame& frame, const FeatureGrid& grid,
                                                      const Pose& pose, const CameraIntrinsics& k, double radius,
                                                      int max_hamming) {
  std::vector<DescriptorMatch> cand;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const MapPoint& p = map.point(points[i]);
    const Vec3 pc = pose * p.position;
    if (pc.z() <= 1e-6) continue;
    const Vec2 px = k.project(pc);
    if (px.x() < -radius || px.y() < -radius || px.x() > k.width + radius || px.y() > k.height + radius) continue;
    grid.for_each_within(px, radius, [&](std::size_t j) {
      const int d = hamming(p.descriptor, frame.observations[j].descriptor);
      if (d <= max_hamming) cand.push_back({i, j, d});
    });
  }
  return mutual_best(cand, points.size(), frame.observations.size(), max_hamming);
}

}  // namespace detail

/// Pose prediction from the constant-velocity model.
inline Pose predict_pose(const TrackerState& state, int frame_index) {
  if (!state.motion) return state.pose;
  const int gap = std::max(1, std::abs(frame_index - state.frame_index));
  return (gap == 1 ? *state.motion : pose_power(*state.motion, gap)) * state.pose;
}

/// Tracks one frame against the local map. Frames may arrive in either time
/// direction; the motion model works on frame-index distance.
inline TrackResult track_frame(TrackerState& state, const WorldMap& map, const Frame& frame,
                               const CameraIntrinsics& k, const TrackerConfig& cfg) {
  TrackResult result;
  const Pose predicted = predict_pose(state, frame.index);
  result.pose = predicted;

  auto lose = [&]() {
    state.mode = TrackMode::lost;
    ++state.lost_streak;
    result.tracked = false;
    return result;
  };
  if (frame.observations.empty() || map.points().empty()) return lose();

  const auto local = detail::local_map_points(map, cfg.local_keyframes);
  std::vector<Vec2> pixels;
  pixels.reserve(frame.observations.size());
  for (const auto& o : frame.observations) pixels.push_back(o.pixel);
  const FeatureGrid grid(pixels, k);

  auto solve = [&](const Pose& guess, double radius, std::vector<DescriptorMatch>& matches) -> std::optional<PnpResult> {
    matches = detail::project_and_match(map, local, frame, grid, guess, k, radius, cfg.max_hamming);
    if (static_cast<int>(matches.size()) < cfg.min_inliers) return std::nullopt;
    std::vector<PnpMatch> pm;
    pm.reserve(matches.size());
    for (const auto& m : matches) pm.push_back({map.point(local[m.a]).position, frame.observations[m.b].pixel});
    try {
      auto r = estimate_pose_pnp(pm, k, guess, {.inlier_threshold = cfg.pnp_threshold});
      if (r.inlier_count < cfg.min_inliers) return std::nullopt;
      return r;
    } catch (const Error&) {
      return std::nullopt;
    }
  };

  std::vector<DescriptorMatch> matches;
  auto pnp = solve(predicted, cfg.search_radius, matches);
  result.matched = static_cast<int>(matches.size());
  if (!pnp && cfg.fallback_radius > cfg.search_radius) {
    pnp = solve(predicted, cfg.fallback_radius, matches);
    result.matched = std::max(result.matched, static_cast<int>(matches.size()));
  }
  if (!pnp) return lose();
  if (cfg.refine_radius > 0.0) {
    std::vector<DescriptorMatch> refined_matches;
    if (auto refined = solve(pnp->pose, cfg.refine_radius, refined_matches);
        refined && refined->inlier_count >= pnp->inlier_count) {
      pnp = std::move(refined);
      matches = std::move(refined_matches);
    }
  }

  result.tracked = true;
  result.pose = pnp->pose;
  result.inliers = pnp->inlier_count;
  for (std::size_t i = 0; i < matches.size(); ++i)
    if (pnp->inliers[i]) result.associations.push_back({matches[i].b, local[matches[i].a]});

  const int gap = std::max(1, std::abs(frame.index - state.frame_index));
  const Pose step = result.pose * state.pose.inverse();
  state.motion = gap == 1 ? step : pose_power(step, 1.0 / gap);
  state.pose = result.pose;
  state.frame_index = frame.index;
  state.mode = TrackMode::tracking;
  state.lost_streak = 0;
  ++state.frames_since_keyframe;
  return result;
}

inline bool keyframe_decision(const TrackerState& state, const TrackResult& result, const TrackerConfig& cfg) {
  if (!result.tracked) return false;
  return state.frames_since_keyframe >= cfg.keyframe_gap ||
         result.inliers < cfg.refresh_fraction * static_cast<double>(state.reference_count);
}

struct KeyFrameInsertion {
  KeyFrameId id = 0;
  std::size_t new_points = 0;
  BundleAdjustReport bundle_adjust;
  std::size_t culled = 0;
};

/// Turns a tracked frame into a keyframe: links its inlier associations,
/// triangulates fresh points against recent keyframes, then runs local
/// bundle adjustment and drops observations that no longer fit.
inline KeyFrameInsertion insert_tracked_keyframe(TrackerState& state, WorldMap& map, const Frame& frame,
                                                 const TrackResult& result, const CameraIntrinsics& k,
                                                 const TrackerConfig& cfg) {
  KeyFrame kf;
  kf.id = map.allocate_keyframe_id();
  kf.frame_index = frame.index;
  kf.timestamp = frame.timestamp;
  kf.pose = result.pose;
  kf.features.reserve(frame.observations.size());
  for (const auto& o : frame.observations) kf.features.push_back({o.pixel, o.descriptor, o.landmark_id});
  kf.point_ids.assign(kf.features.size(), std::nullopt);
  for (const auto& [obs, pid] : result.associations) kf.point_ids[obs] = pid;

  std::vector<MapPoint> fresh;
  std::vector<bool> used(kf.features.size(), false);
  for (std::size_t f = 0; f < kf.features.size(); ++f) used[f] = kf.point_ids[f].has_value();
  int neighbors = 0;
  for (auto it = map.keyframes().rbegin(); it != map.keyframes().rend() && neighbors < cfg.triangulation_neighbors;
       ++it, ++neighbors) {
    const KeyFrame& other = it->second;
    if ((other.pose.center() - kf.pose.center()).norm() < 1e-9) continue;
    std::vector<std::size_t> ia, ib;
    std::vector<Descriptor> da, db;
    for (std::size_t f = 0; f < kf.features.size(); ++f)
      if (!used[f]) {
        ia.push_back(f);
        da.push_back(kf.features[f].descriptor);
      }
    for (std::size_t g = 0; g < other.features.size(); ++g)
      if (!other.point_ids[g]) {
        bool claimed = false;
        for (const auto& p : fresh) claimed |= p.observers.count(other.id) && p.observers.at(other.id) == g;
        if (claimed) continue;
        ib.push_back(g);
        db.push_back(other.features[g].descriptor);
      }
    for (const auto& m : match_exhaustive(da, db, cfg.max_hamming)) {
      const std::size_t f = ia[m.a], g = ib[m.b];
      Point3 x;
      try {
        x = triangulate(other.pose, kf.pose, other.features[g].pixel, kf.features[f].pixel, k);
      } catch (const Error&) {
        continue;
      }
      if (reprojection_error(other.pose, x, other.features[g].pixel, k) > cfg.triangulation_max_error) continue;
      if (reprojection_error(kf.pose, x, kf.features[f].pixel, k) > cfg.triangulation_max_error) continue;
      if (parallax_angle(other.pose.center(), kf.pose.center(), x) < cfg.min_triangulation_parallax) continue;
      MapPoint p;
      p.id = map.allocate_point_id();
      p.position = x;
      p.descriptor = other.features[g].descriptor;
      p.observers[other.id] = g;
      kf.point_ids[f] = p.id;
      used[f] = true;
      fresh.push_back(std::move(p));
    }
  }

  KeyFrameInsertion out;
  out.id = kf.id;
  out.new_points = fresh.size();
  map.insert_keyframe(std::move(kf), std::move(fresh));
  out.bundle_adjust = local_bundle_adjust(map, k, cfg.bundle_adjust);

  std::vector<KeyFrameId> window;
  for (auto it = map.keyframes().rbegin(); it != map.keyframes().rend() &&
                                           static_cast<int>(window.size()) < cfg.bundle_adjust.window;
       ++it)
    window.push_back(it->first);
  out.culled = cull_observations(map, k, cfg.cull_error, window);

  const KeyFrame& inserted = map.keyframe(out.id);
  state.pose = inserted.pose;
  state.frames_since_keyframe = 0;
  state.reference_count = static_cast<std::size_t>(result.inliers);
  return out;
}

}  // namespace rvo
