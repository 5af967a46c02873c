#pragma once

#include <optional>

#include "rvo/frame.hpp"
#include "rvo/tracker/initializer.hpp"
#include "rvo/tracker/tracker.hpp"

namespace rvo {

struct OdometryStep {
  bool initialized_now = false;
  std::optional<TrackResult> track;  // set once a map exists (not on the initializing frame)
  std::optional<KeyFrameId> keyframe;
};

/// Forward monocular odometry on a single map: bootstraps with an
/// initializer, then tracks frames and inserts keyframes.
class Odometry {
 public:
  Odometry(InitializerConfig init, CameraIntrinsics intrinsics, TrackerConfig tracker = {},
           std::uint64_t id_base = 0)
      : intrinsics_(intrinsics), tracker_(tracker), initializer_(init, intrinsics, tracker, id_base) {}

  bool initialized() const { return map_.has_value(); }
  const WorldMap& map() const { return *map_; }
  WorldMap& map() { return *map_; }
  const TrackerState& state() const { return state_; }
  TrackerState& state() { return state_; }
  const TrackerConfig& config() const { return tracker_; }
  /// Frame indices of the initializing pair (valid once initialized).
  int origin_frame() const { return origin_frame_; }
  int init_frame() const { return init_frame_; }
  int init_attempts() const { return initializer_.attempts(); }

  /// Continues tracking on `map` (for instance after fusion) from `state`.
  void adopt(WorldMap map, const TrackerState& state) {
    map_ = std::move(map);
    state_ = state;
  }

  /// `disturbance` is applied to the motion model before prediction; it
  /// models a corrupted pose prior.
  OdometryStep push(const Frame& frame, const std::optional<Mat3>& disturbance = std::nullopt) {
    OdometryStep step;
    if (!map_) {
      if (auto init = initializer_.push(frame)) {
        map_ = std::move(init->map);
        state_ = init->state;
        origin_frame_ = init->reference_frame;
        init_frame_ = init->current_frame;
        step.initialized_now = true;
      }
      return step;
    }
    if (disturbance && state_.motion) state_.motion->rotation = *disturbance * state_.motion->rotation;
    TrackResult r = track_frame(state_, *map_, frame, intrinsics_, tracker_);
    if (keyframe_decision(state_, r, tracker_))
      step.keyframe = insert_tracked_keyframe(state_, *map_, frame, r, intrinsics_, tracker_).id;
    step.track = std::move(r);
    return step;
  }

 private:
  CameraIntrinsics intrinsics_;
  TrackerConfig tracker_;
  Initializer initializer_;
  std::optional<WorldMap> map_;
  TrackerState state_;
  int origin_frame_ = -1;
  int init_frame_ = -1;
};

}  // namespace rvo
