#pragma once

#include <map>
#include <optional>
#include <vector>

#include "rvo/worldgen/world.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo::test {

/// Map built from ground truth: keyframes every `gap` frames starting at
/// `first`, every landmark seen by at least two keyframes becomes a map point
/// with exact position.
inline WorldMap truth_map(const World& w, int keyframes, int gap, int first = 0, std::uint64_t id_base = 0) {
  WorldMap map(id_base);
  std::map<LandmarkId, MapPointId> made;
  std::map<LandmarkId, std::vector<std::pair<int, Vec2>>> seen;
  std::vector<Frame> frames;
  for (int k = 0; k < keyframes; ++k) frames.push_back(observe(w, first + k * gap));
  for (int k = 0; k < keyframes; ++k)
    for (const auto& o : frames[k].observations) seen[o.landmark_id].push_back({k, o.pixel});

  for (int k = 0; k < keyframes; ++k) {
    KeyFrame kf;
    kf.id = map.allocate_keyframe_id();
    kf.frame_index = first + k * gap;
    kf.timestamp = w.trajectory[kf.frame_index].timestamp;
    kf.pose = w.trajectory[kf.frame_index].pose;
    std::vector<MapPoint> fresh;
    for (const auto& o : frames[k].observations) {
      kf.features.push_back({o.pixel, o.descriptor, o.landmark_id});
      std::optional<MapPointId> slot;
      if (seen[o.landmark_id].size() >= 2) {
        if (auto it = made.find(o.landmark_id); it != made.end()) {
          slot = it->second;
        } else {
          MapPoint p;
          p.id = map.allocate_point_id();
          p.position = w.landmarks[o.landmark_id].position;
          p.descriptor = o.descriptor;
          made[o.landmark_id] = p.id;
          slot = p.id;
          fresh.push_back(p);
        }
      }
      kf.point_ids.push_back(slot);
    }
    map.insert_keyframe(std::move(kf), std::move(fresh));
  }
  return map;
}

/// Copy of `map` with every point and camera mapped by `s`.
inline WorldMap transform_map(const WorldMap& map, const Sim3& s) {
  WorldMap out;
  std::map<MapPointId, bool> placed;
  for (const auto& [kid, kf0] : map.keyframes()) {
    KeyFrame kf = kf0;
    kf.pose = s.transform_camera(kf0.pose);
    kf.pose.rotation = orthonormalize(kf.pose.rotation);
    std::vector<MapPoint> fresh;
    for (const auto& slot : kf.point_ids) {
      if (!slot || placed.count(*slot)) continue;
      placed[*slot] = true;
      MapPoint p = map.point(*slot);
      p.position = s * p.position;
      p.observers.clear();
      fresh.push_back(p);
    }
    out.insert_keyframe(std::move(kf), std::move(fresh));
  }
  out.reserve_ids(map.next_keyframe_id(), map.next_point_id());
  return out;
}

inline World clean_world(std::uint64_t seed) {
  Scenario s;
  s.seed = seed;
  s.frames = 60;
  s.pixel_noise = 0.0;
  s.outlier_rate = 0.0;
  s.descriptor_flip_rate = 0.0;
  s.landmark_density = 0.004;
  return generate_world(s);
}

}  // namespace rvo::test
