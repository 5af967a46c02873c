#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "rvo/error.hpp"
#include "rvo/geometry/types.hpp"

namespace rvo {

using KeyFrameId = std::uint64_t;
using MapPointId = std::uint64_t;

/// One keyframe feature. `truth` is the generating landmark and is only read
/// by evaluation code, never by estimators.
struct Feature {
  Vec2 pixel = Vec2::Zero();
  Descriptor descriptor;
  LandmarkId truth = 0;
};

struct KeyFrame {
  KeyFrameId id = 0;
  int frame_index = 0;
  double timestamp = 0.0;
  Pose pose;  // world to camera
  std::vector<Feature> features;
  std::vector<std::optional<MapPointId>> point_ids;  // parallel to features

  std::size_t tracked_count() const {
    std::size_t n = 0;
    for (const auto& p : point_ids) n += p.has_value() ? 1 : 0;
    return n;
  }
};

struct MapPoint {
  MapPointId id = 0;
  Point3 position = Point3::Zero();
  Descriptor descriptor;                        // descriptor of the first observation
  std::map<KeyFrameId, std::size_t> observers;  // keyframe id -> feature index
};

enum class MapStatus { active, frozen };

namespace detail {

template <class M>
auto& lookup(M& m, std::uint64_t id, const char* what) {
  const auto it = m.find(id);
  if (it == m.end()) throw Error(ErrorCode::DanglingReference, std::string("unknown ") + what + " " + std::to_string(id));
  return it->second;
}

}  // namespace detail

/// Keyframes and map points with referential integrity: every keyframe slot
/// names an existing point that lists the keyframe back, and vice versa.
class WorldMap {
 public:
  WorldMap() = default;
  /// Ids handed out by this map start at `id_base`.
  explicit WorldMap(std::uint64_t id_base) : next_keyframe_id_(id_base), next_point_id_(id_base) {}

  MapStatus status() const { return status_; }
  bool frozen() const { return status_ == MapStatus::frozen; }
  void freeze() { status_ = MapStatus::frozen; }
  void unfreeze() { status_ = MapStatus::active; }

  const std::map<KeyFrameId, KeyFrame>& keyframes() const { return keyframes_; }
  const std::map<MapPointId, MapPoint>& points() const { return points_; }
  bool empty() const { return keyframes_.empty(); }

  const KeyFrame& keyframe(KeyFrameId id) const { return detail::lookup(keyframes_, id, "keyframe"); }
  const MapPoint& point(MapPointId id) const { return detail::lookup(points_, id, "map point"); }
  bool has_point(MapPointId id) const { return points_.count(id) != 0; }
  bool has_keyframe(KeyFrameId id) const { return keyframes_.count(id) != 0; }
  const KeyFrame& last_keyframe() const {
    if (keyframes_.empty()) throw Error(ErrorCode::InvalidArgument, "map has no keyframes");
    return keyframes_.rbegin()->second;
  }

  KeyFrameId allocate_keyframe_id() { return next_keyframe_id_++; }
  MapPointId allocate_point_id() { return next_point_id_++; }
  KeyFrameId next_keyframe_id() const { return next_keyframe_id_; }
  MapPointId next_point_id() const { return next_point_id_; }
  /// Moves id allocation forward to at least the given values.
  void reserve_ids(KeyFrameId next_keyframe, MapPointId next_point) {
    next_keyframe_id_ = std::max(next_keyframe_id_, next_keyframe);
    next_point_id_ = std::max(next_point_id_, next_point);
  }

  /// Adds `kf` together with points it introduces. `kf.point_ids` may name
  /// existing points or entries of `new_points`; a new point may also list
  /// earlier keyframes (with a free feature slot) in its observers, and it
  /// always receives `kf` as an observer. Validation happens before any
  /// mutation, so a throwing call leaves the map unchanged.
  void insert_keyframe(KeyFrame kf, std::vector<MapPoint> new_points = {}) {
    require_active();
    if (!keyframes_.empty() && kf.id <= keyframes_.rbegin()->first)
      throw Error(ErrorCode::OutOfOrderKeyFrame, "keyframe id " + std::to_string(kf.id) + " is not increasing");
    if (kf.point_ids.size() != kf.features.size()) kf.point_ids.resize(kf.features.size());
    if (!kf.pose.is_valid(1e-6)) throw Error(ErrorCode::InvalidArgument, "keyframe pose is not a valid rigid transform");

    std::map<MapPointId, std::size_t> fresh;
    for (std::size_t i = 0; i < new_points.size(); ++i) {
      const auto& p = new_points[i];
      if (points_.count(p.id) || !fresh.emplace(p.id, i).second)
        throw Error(ErrorCode::InvalidArgument, "duplicate map point id " + std::to_string(p.id));
      if (!p.position.allFinite()) throw Error(ErrorCode::InvalidArgument, "map point position is not finite");
      for (const auto& [kid, fidx] : p.observers) {
        if (kid == kf.id) continue;
        const auto it = keyframes_.find(kid);
        if (it == keyframes_.end())
          throw Error(ErrorCode::DanglingReference, "map point observed by unknown keyframe " + std::to_string(kid));
        if (fidx >= it->second.features.size() || it->second.point_ids[fidx].has_value())
          throw Error(ErrorCode::InvalidArgument, "observer slot unavailable in keyframe " + std::to_string(kid));
      }
    }
    std::map<MapPointId, std::size_t> seen;
    for (std::size_t f = 0; f < kf.point_ids.size(); ++f) {
      if (!kf.point_ids[f]) continue;
      const MapPointId pid = *kf.point_ids[f];
      if (!points_.count(pid) && !fresh.count(pid))
        throw Error(ErrorCode::DanglingReference, "keyframe references unknown map point " + std::to_string(pid));
      if (!seen.emplace(pid, f).second)
        throw Error(ErrorCode::InvalidArgument, "map point " + std::to_string(pid) + " observed twice in a keyframe");
    }
    for (const auto& p : new_points) {
      const auto it = seen.find(p.id);
      if (it == seen.end())
        throw Error(ErrorCode::InvalidArgument, "new map point " + std::to_string(p.id) + " not observed by keyframe");
    }

    for (auto& p : new_points) {
      p.observers[kf.id] = seen.at(p.id);
      for (const auto& [kid, fidx] : p.observers)
        if (kid != kf.id) keyframes_.at(kid).point_ids[fidx] = p.id;
      const MapPointId pid = p.id;
      points_.emplace(pid, std::move(p));
      next_point_id_ = std::max(next_point_id_, pid + 1);
    }
    for (const auto& [pid, f] : seen) points_.at(pid).observers[kf.id] = f;
    next_keyframe_id_ = std::max(next_keyframe_id_, kf.id + 1);
    const KeyFrameId kid = kf.id;
    keyframes_.emplace(kid, std::move(kf));
  }

  /// Links an unassigned feature of an existing keyframe to an existing point.
  void add_observation(KeyFrameId kid, std::size_t feature, MapPointId pid) {
    require_active();
    KeyFrame& kf = detail::lookup(keyframes_, kid, "keyframe");
    MapPoint& p = detail::lookup(points_, pid, "map point");
    if (feature >= kf.features.size() || kf.point_ids[feature] || p.observers.count(kid))
      throw Error(ErrorCode::InvalidArgument, "observation slot unavailable");
    kf.point_ids[feature] = pid;
    p.observers[kid] = feature;
  }

  /// Unlinks one keyframe feature; a point left without observers is erased.
  void remove_observation(KeyFrameId kid, std::size_t feature) {
    require_active();
    KeyFrame& kf = detail::lookup(keyframes_, kid, "keyframe");
    if (feature >= kf.point_ids.size() || !kf.point_ids[feature]) return;
    const MapPointId pid = *kf.point_ids[feature];
    kf.point_ids[feature].reset();
    MapPoint& p = points_.at(pid);
    p.observers.erase(kid);
    if (p.observers.empty()) points_.erase(pid);
  }

  void erase_point(MapPointId pid) {
    require_active();
    const MapPoint& p = detail::lookup(points_, pid, "map point");
    for (const auto& [kid, f] : p.observers) keyframes_.at(kid).point_ids[f].reset();
    points_.erase(pid);
  }

  void set_pose(KeyFrameId kid, const Pose& pose) {
    require_active();
    detail::lookup(keyframes_, kid, "keyframe").pose = pose;
  }

  void set_position(MapPointId pid, const Point3& position) {
    require_active();
    detail::lookup(points_, pid, "map point").position = position;
  }

  /// Empty when all invariants hold, otherwise a description of the first
  /// violation found.
  std::string integrity_error() const {
    for (const auto& [kid, kf] : keyframes_) {
      if (kf.id != kid) return "keyframe key mismatch";
      if (kf.point_ids.size() != kf.features.size()) return "keyframe slot count mismatch";
      for (std::size_t f = 0; f < kf.point_ids.size(); ++f) {
        if (!kf.point_ids[f]) continue;
        const auto it = points_.find(*kf.point_ids[f]);
        if (it == points_.end()) return "keyframe " + std::to_string(kid) + " references missing point";
        const auto ob = it->second.observers.find(kid);
        if (ob == it->second.observers.end() || ob->second != f)
          return "point " + std::to_string(it->first) + " does not list keyframe " + std::to_string(kid);
      }
    }
    for (const auto& [pid, p] : points_) {
      if (p.id != pid) return "point key mismatch";
      if (p.observers.empty()) return "point " + std::to_string(pid) + " has no observers";
      if (!p.position.allFinite()) return "point " + std::to_string(pid) + " is not finite";
      for (const auto& [kid, f] : p.observers) {
        const auto it = keyframes_.find(kid);
        if (it == keyframes_.end()) return "point " + std::to_string(pid) + " lists missing keyframe";
        if (f >= it->second.point_ids.size() || it->second.point_ids[f] != pid)
          return "keyframe " + std::to_string(kid) + " does not reference point " + std::to_string(pid);
      }
    }
    return {};
  }

 private:
  void require_active() const {
    if (status_ == MapStatus::frozen) throw Error(ErrorCode::FrozenMap, "map is frozen");
  }

  std::map<KeyFrameId, KeyFrame> keyframes_;
  std::map<MapPointId, MapPoint> points_;
  MapStatus status_ = MapStatus::active;
  KeyFrameId next_keyframe_id_ = 0;
  MapPointId next_point_id_ = 0;
};

/// Line-oriented snapshot: "KF id frame timestamp tx ty tz qx qy qz qw" with
/// the camera center and world-from-camera rotation, then "PT id x y z nobs".
inline void write_map_snapshot(const WorldMap& map, std::ostream& out) {
  out << std::setprecision(12);
  for (const auto& [id, kf] : map.keyframes()) {
    const Vec3 c = kf.pose.center();
    const Eigen::Quaterniond q(kf.pose.rotation.transpose());
    out << "KF " << id << ' ' << kf.frame_index << ' ' << kf.timestamp << ' ' << c.x() << ' ' << c.y() << ' '
        << c.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  for (const auto& [id, p] : map.points())
    out << "PT " << id << ' ' << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' '
        << p.observers.size() << '\n';
}

inline void write_map_snapshot(const WorldMap& map, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  write_map_snapshot(map, out);
}

}  // namespace rvo
