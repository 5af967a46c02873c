#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdlib>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "rvo/geometry/horn.hpp"
#include "rvo/tracker/matcher.hpp"
#include "rvo/tracker/tracker.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo {

struct MatchHypothesis {
  MapPointId old_point = 0;
  MapPointId new_point = 0;
  int distance = 0;   // descriptor bits
  int frame_gap = 0;  // closest pair of observing frames
};

namespace detail {

inline std::vector<int> observing_frames(const WorldMap& map, const MapPoint& p) {
  std::vector<int> frames;
  for (const auto& [kid, f] : p.observers) frames.push_back(map.keyframe(kid).frame_index);
  std::sort(frames.begin(), frames.end());
  return frames;
}

inline int frame_gap(const std::vector<int>& a, const std::vector<int>& b) {
  int best = INT_MAX;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    best = std::min(best, std::abs(a[i] - b[j]));
    if (a[i] < b[j]) ++i;
    else ++j;
  }
  return best;
}

}  // namespace detail

/// 3D-3D match candidates between an old map and a new one. A pair is only
/// considered when some keyframes observing the two points are at most
/// `window` frames apart; candidates are then reduced to mutual best
/// descriptor matches under `max_hamming`.
inline std::vector<MatchHypothesis> collect_hypotheses(const WorldMap& old_map, const WorldMap& new_map, int window,
                                                       int max_hamming = 64) {
  std::vector<MatchHypothesis> out;
  if (old_map.points().empty() || new_map.points().empty()) return out;

  std::vector<MapPointId> old_ids;
  std::vector<std::vector<int>> old_frames;
  std::map<int, std::vector<std::size_t>> by_frame;  // frame -> old point indices
  for (const auto& [pid, p] : old_map.points()) {
    old_frames.push_back(detail::observing_frames(old_map, p));
    for (int f : old_frames.back()) by_frame[f].push_back(old_ids.size());
    old_ids.push_back(pid);
  }

  std::vector<MapPointId> new_ids;
  std::vector<DescriptorMatch> cand;
  std::vector<int> gaps;
  std::vector<int> stamp(old_ids.size(), -1);
  for (const auto& [pid, p] : new_map.points()) {
    const std::size_t n = new_ids.size();
    new_ids.push_back(pid);
    const auto frames = detail::observing_frames(new_map, p);
    for (int f : frames) {
      for (auto it = by_frame.lower_bound(f - window); it != by_frame.end() && it->first <= f + window; ++it)
        for (std::size_t o : it->second) {
          if (stamp[o] == static_cast<int>(n)) continue;
          stamp[o] = static_cast<int>(n);
          const int d = hamming(p.descriptor, old_map.point(old_ids[o]).descriptor);
          if (d > max_hamming) continue;
          cand.push_back({n, o, d});
        }
    }
  }
  for (const auto& m : mutual_best(cand, new_ids.size(), old_ids.size(), max_hamming)) {
    const auto frames = detail::observing_frames(new_map, new_map.point(new_ids[m.a]));
    out.push_back({old_ids[m.b], new_ids[m.a], m.distance, detail::frame_gap(old_frames[m.b], frames)});
  }
  return out;
}

/// Adds the keyframes and points of a recovered segment to the forward map
/// they both grew from. Segment keyframes must carry ids above every forward
/// id. Links to points the forward map no longer holds, and observations of
/// forward keyframe slots that have been taken meanwhile, are dropped.
inline WorldMap merge_segment(const WorldMap& forward, const WorldMap& segment, KeyFrameId segment_base) {
  WorldMap out = forward;
  out.unfreeze();
  for (const auto& [kid, skf] : segment.keyframes()) {
    if (kid < segment_base) continue;
    KeyFrame kf = skf;
    std::vector<MapPoint> fresh;
    for (std::size_t f = 0; f < kf.point_ids.size(); ++f) {
      auto& slot = kf.point_ids[f];
      if (!slot) continue;
      if (out.has_point(*slot)) continue;
      if (*slot < segment_base || !segment.has_point(*slot)) {
        slot.reset();
        continue;
      }
      MapPoint p = segment.point(*slot);
      p.observers.clear();
      fresh.push_back(std::move(p));
    }
    out.insert_keyframe(std::move(kf), std::move(fresh));
  }
  // Observations of segment points by forward keyframes, where still free.
  for (const auto& [pid, p] : segment.points()) {
    if (pid < segment_base || !out.has_point(pid)) continue;
    for (const auto& [kid, f] : p.observers) {
      if (kid >= segment_base || !out.has_keyframe(kid)) continue;
      const KeyFrame& kf = out.keyframe(kid);
      if (f < kf.point_ids.size() && !kf.point_ids[f] && !out.point(pid).observers.count(kid))
        out.add_observation(kid, f, pid);
    }
  }
  return out;
}

struct FusionConfig {
  int min_hypotheses = 20;
  double threshold_fraction = 0.05;  // of the median distance of matched old points to their centroid
  int ransac_iterations = 1000;
  std::uint64_t seed = 0;
};

struct SeamReport {
  std::size_t hypotheses = 0;
  std::size_t inliers = 0;
  Sim3 transform;  // new map coordinates -> old map coordinates
  double residual_rms = 0.0;
  double threshold = 0.0;
  std::size_t merged_points = 0;
  std::size_t keyframes_added = 0;
  KeyFrameId first_added_keyframe = 0;  // keyframes from the new map are numbered from here
};

inline void write_seam_report(const SeamReport& s, std::ostream& out) {
  const Vec3 w = so3_log(s.transform.rotation);
  out << "hypotheses " << s.hypotheses << "\ninliers " << s.inliers << "\nscale " << s.transform.scale
      << "\nrotation " << w.x() << ' ' << w.y() << ' ' << w.z() << "\ntranslation " << s.transform.translation.x()
      << ' ' << s.transform.translation.y() << ' ' << s.transform.translation.z() << "\nresidual_rms "
      << s.residual_rms << "\nmerged_points " << s.merged_points << "\nkeyframes_added " << s.keyframes_added << '\n';
}

struct FusionResult {
  WorldMap map;
  SeamReport seam;
  std::map<KeyFrameId, KeyFrameId> keyframe_ids;  // new map id -> merged id
  std::map<MapPointId, MapPointId> point_ids;
};

/// Sim3 taking the new map's hypothesis points onto the old map's.
inline RansacSim3Result estimate_seam(const WorldMap& old_map, const WorldMap& new_map,
                                      std::span<const MatchHypothesis> hypotheses, const FusionConfig& config,
                                      double* threshold = nullptr) {
  std::vector<PointPair> pairs;
  std::vector<Point3> targets;
  for (const auto& h : hypotheses) {
    pairs.push_back({new_map.point(h.new_point).position, old_map.point(h.old_point).position});
    targets.push_back(pairs.back().target);
  }
  const double thr = config.threshold_fraction * median_centroid_distance(targets);
  if (threshold) *threshold = thr;
  if (!(thr > 0.0)) throw Error(ErrorCode::NoConsensus, "degenerate hypothesis geometry");
  return ransac_sim3(pairs, {.inlier_threshold = thr, .max_iterations = config.ransac_iterations, .seed = config.seed});
}

/// Merges `new_map` into `old_map`. The new map is mapped into the old
/// map's frame by a Sim3 estimated with RANSAC over the hypotheses; inlier
/// pairs become a single point keeping the old id. New keyframes receive
/// ids above the old map's, in frame order. The old map is not modified;
/// the result is active.
inline FusionResult fuse_maps(const WorldMap& old_map, const WorldMap& new_map,
                              std::span<const MatchHypothesis> hypotheses, const FusionConfig& config = {}) {
  if (static_cast<int>(hypotheses.size()) < config.min_hypotheses)
    throw Error(ErrorCode::FusionFailure, "only " + std::to_string(hypotheses.size()) + " hypotheses, need " +
                                              std::to_string(config.min_hypotheses));
  FusionResult out;
  RansacSim3Result rs;
  try {
    rs = estimate_seam(old_map, new_map, hypotheses, config, &out.seam.threshold);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoConsensus) throw;
    throw Error(ErrorCode::FusionFailure, e.what());
  }
  const Sim3& s = rs.transform;
  out.seam.hypotheses = hypotheses.size();
  out.seam.inliers = static_cast<std::size_t>(rs.inlier_count);
  out.seam.transform = s;
  out.seam.residual_rms = rs.inlier_rms;

  out.map = old_map;
  out.map.unfreeze();
  for (std::size_t i = 0; i < hypotheses.size(); ++i)
    if (rs.inliers[i]) out.point_ids[hypotheses[i].new_point] = hypotheses[i].old_point;
  out.seam.merged_points = out.point_ids.size();

  MapPointId next_point = old_map.next_point_id();
  for (const auto& [pid, p] : new_map.points())
    if (!out.point_ids.count(pid)) out.point_ids[pid] = next_point++;

  std::vector<const KeyFrame*> order;
  for (const auto& [kid, kf] : new_map.keyframes()) order.push_back(&kf);
  std::stable_sort(order.begin(), order.end(),
                   [](const KeyFrame* a, const KeyFrame* b) { return a->frame_index < b->frame_index; });
  KeyFrameId next_kf = old_map.next_keyframe_id();
  out.seam.first_added_keyframe = next_kf;
  for (const KeyFrame* k : order) out.keyframe_ids[k->id] = next_kf++;

  for (const KeyFrame* k : order) {
    KeyFrame kf = *k;
    kf.id = out.keyframe_ids.at(k->id);
    kf.pose = s.transform_camera(k->pose);
    kf.pose.rotation = orthonormalize(kf.pose.rotation);
    std::vector<MapPoint> fresh;
    std::map<MapPointId, bool> used;
    for (auto& slot : kf.point_ids) {
      if (!slot) continue;
      const MapPointId merged = out.point_ids.at(*slot);
      if (used.count(merged) || (out.map.has_point(merged) && out.map.point(merged).observers.count(kf.id))) {
        slot.reset();
        continue;
      }
      used[merged] = true;
      if (!out.map.has_point(merged)) {
        MapPoint p = new_map.point(*slot);
        p.id = merged;
        p.position = s * p.position;
        p.observers.clear();
        fresh.push_back(std::move(p));
      }
      slot = merged;
    }
    out.map.insert_keyframe(std::move(kf), std::move(fresh));
  }
  out.map.reserve_ids(next_kf, next_point);
  out.seam.keyframes_added = order.size();
  return out;
}

/// Re-expresses a tracker state after its map was mapped by `s`.
inline TrackerState transform_state(const TrackerState& state, const Sim3& s) {
  TrackerState out = state;
  out.pose = s.transform_camera(state.pose);
  out.pose.rotation = orthonormalize(out.pose.rotation);
  if (state.motion) out.motion = Pose{state.motion->rotation, s.scale * state.motion->translation};
  return out;
}

}  // namespace rvo
