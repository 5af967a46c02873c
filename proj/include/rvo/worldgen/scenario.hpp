#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rvo/error.hpp"
#include "rvo/geometry/types.hpp"

namespace rvo {

enum class TrajectoryKind { straight, loop, figure_eight, kitti_like };

enum class EventKind {
  texture_dropout,  // magnitude: fraction of visible landmarks kept
  noise_burst,      // magnitude: pixel-noise multiplier
  pose_jitter,      // magnitude: rotation (degrees) injected into the tracker's motion model
};

struct FailureEvent {
  int start = 0;
  int end = 0;
  EventKind kind = EventKind::texture_dropout;
  double magnitude = 1.0;

  bool active(int frame) const { return frame >= start && frame <= end; }
};

struct Scenario {
  std::string id = "scenario";
  std::uint64_t seed = 0;
  TrajectoryKind trajectory = TrajectoryKind::straight;
  int frames = 300;
  double fps = 10.0;
  double speed = 10.0;               // m/s
  double landmark_density = 0.01;    // points per m^3
  double pixel_noise = 0.5;          // px, Gaussian sigma per axis
  double outlier_rate = 0.02;        // fraction of observations with a uniform pixel
  double descriptor_flip_rate = 0.05;
  CameraIntrinsics intrinsics{};
  double min_depth = 0.5;            // m
  double max_range = 60.0;           // m
  double lateral_margin = 30.0;      // m around the path bounding box
  double road_half_width = 3.0;      // m, landmark-free corridor around the path
  double landmark_min_height = -8.0;  // camera y axis points down
  double landmark_max_height = 3.0;
  std::vector<FailureEvent> events;
};

inline std::string to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::straight: return "straight";
    case TrajectoryKind::loop: return "loop";
    case TrajectoryKind::figure_eight: return "figure_eight";
    case TrajectoryKind::kitti_like: return "kitti_like";
  }
  return "straight";
}

inline std::string to_string(EventKind k) {
  switch (k) {
    case EventKind::texture_dropout: return "texture_dropout";
    case EventKind::noise_burst: return "noise_burst";
    case EventKind::pose_jitter: return "pose_jitter";
  }
  return "texture_dropout";
}

/// Throws InvalidScenario naming the first violated field.
inline void validate(const Scenario& s) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::InvalidScenario, field + ": " + why);
  };
  auto rate = [&](double v, const char* field) {
    if (!(v >= 0.0 && v <= 1.0)) fail(field, "must lie in [0, 1]");
  };
  if (s.frames < 2) fail("frames", "need at least 2 frames");
  if (!(s.fps > 0.0)) fail("fps", "must be positive");
  if (!(s.speed >= 0.0)) fail("speed", "must be non-negative");
  if (!(s.landmark_density >= 0.0)) fail("landmark_density", "must be non-negative");
  if (!(s.pixel_noise >= 0.0)) fail("pixel_noise", "must be non-negative");
  rate(s.outlier_rate, "outlier_rate");
  rate(s.descriptor_flip_rate, "descriptor_flip_rate");
  if (!s.intrinsics.is_valid()) fail("intrinsics", "invalid camera");
  if (!(s.min_depth > 0.0 && s.max_range > s.min_depth)) fail("max_range", "must exceed min_depth > 0");
  if (!(s.landmark_max_height > s.landmark_min_height)) fail("landmark_max_height", "empty height band");
  if (!(s.road_half_width >= 0.0 && s.lateral_margin > s.road_half_width))
    fail("lateral_margin", "must exceed road_half_width >= 0");
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    const std::string field = "events[" + std::to_string(i) + "]";
    if (e.start < 0 || e.end < e.start || e.end >= s.frames) fail(field, "frame range outside sequence");
    if (!(e.magnitude >= 0.0)) fail(field, "magnitude must be non-negative");
  }
}

}  // namespace rvo
