#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "rvo/frame.hpp"
#include "rvo/geometry/two_view.hpp"
#include "rvo/rng.hpp"
#include "rvo/stats.hpp"
#include "rvo/tracker/matcher.hpp"
#include "rvo/tracker/tracker.hpp"
#include "rvo/worldmap/bundle_adjustment.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo {

enum class InitializerKind { standard, enhanced };

struct InitializerConfig {
  InitializerKind kind = InitializerKind::standard;
  int min_matches = 100;
  double min_parallax = 1.0 * M_PI / 180.0;  // rad
  /// Fraction of raw descriptor matches that survive as usable
  /// correspondences for the standard matcher.
  double match_yield = 0.58;
  /// Usable-match multiplier; 1 for standard, above 1 for the enhanced
  /// matcher, whose survivors are a superset of the standard ones.
  double yield_multiplier = 1.0;
  int max_hamming = 64;
  std::uint64_t seed = 0;

  static InitializerConfig standard() { return {}; }
  static InitializerConfig enhanced(double multiplier = 2.0) {
    InitializerConfig c;
    c.kind = InitializerKind::enhanced;
    c.yield_multiplier = multiplier;
    return c;
  }
};

inline void validate(const InitializerConfig& c) {
  if (c.kind == InitializerKind::standard && c.yield_multiplier != 1.0)
    throw Error(ErrorCode::InvalidArgument, "yield_multiplier must be 1 for the standard initializer");
  if (c.kind == InitializerKind::enhanced && c.yield_multiplier < 1.0)
    throw Error(ErrorCode::InvalidArgument, "yield_multiplier must be at least 1 for the enhanced initializer");
  if (!(c.match_yield > 0.0 && c.match_yield <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "match_yield must lie in (0, 1]");
  if (c.min_matches < 8) throw Error(ErrorCode::InvalidArgument, "min_matches must be at least 8");
}

struct Initialization {
  WorldMap map;
  TrackerState state;
  int reference_frame = 0;
  int current_frame = 0;
  int usable_matches = 0;
};

/// Two-view map bootstrap over an incoming frame stream.
///
/// The first frame becomes the reference. Each later frame is matched to it;
/// when too few usable matches remain the reference is replaced by the
/// current frame. Otherwise relative pose and structure are estimated and,
/// given enough parallax, a two-keyframe map is produced with its scale fixed
/// so that the median scene depth in the reference view is 1.
class Initializer {
 public:
  Initializer(InitializerConfig config, CameraIntrinsics intrinsics, TrackerConfig tracker = {},
              std::uint64_t id_base = 0)
      : config_(config), intrinsics_(intrinsics), tracker_(tracker), id_base_(id_base) {
    validate(config_);
  }

  const std::optional<Frame>& reference() const { return reference_; }
  int attempts() const { return attempts_; }

  /// Returns the initialized map, or nothing when more frames are needed.
  std::optional<Initialization> push(const Frame& frame) {
    ++attempts_;
    if (!reference_) {
      reset(frame);
      return std::nullopt;
    }
    const Frame& ref = *reference_;
    const auto raw = match_exhaustive(ref_descriptors_, descriptors_of(frame), config_.max_hamming);
    std::vector<PixelPair> pairs;
    std::vector<DescriptorMatch> kept;
    const double keep = std::min(1.0, config_.match_yield * config_.yield_multiplier);
    for (const auto& m : raw) {
      // One draw per (reference, frame, reference feature), shared by every
      // initializer kind, so a larger yield keeps a superset of matches.
      const double u = hashed_uniform(config_.seed, static_cast<std::uint64_t>(ref.index),
                                      static_cast<std::uint64_t>(frame.index), m.a);
      if (u >= keep) continue;
      pairs.push_back({ref.observations[m.a].pixel, frame.observations[m.b].pixel});
      kept.push_back(m);
    }
    if (static_cast<int>(pairs.size()) < config_.min_matches) {
      reset(frame);
      return std::nullopt;
    }

    TwoViewResult tv;
    try {
      tv = two_view_init(pairs, intrinsics_,
                         {.min_parallax = config_.min_parallax,
                          .seed = derive_seed(config_.seed, "two_view", static_cast<std::uint64_t>(frame.index))});
    } catch (const Error&) {
      return std::nullopt;
    }
    if (static_cast<int>(tv.points.size()) < config_.min_matches / 2) return std::nullopt;

    // Scale so the median depth seen from the reference is 1.
    std::vector<double> depths;
    for (const auto& p : tv.points) depths.push_back(p.z());
    const double scale = 1.0 / std::max(median(depths), 1e-12);

    Initialization out{WorldMap(id_base_), {}, ref.index, frame.index, static_cast<int>(pairs.size())};
    KeyFrame a, b;
    a.id = out.map.allocate_keyframe_id();
    b.id = out.map.allocate_keyframe_id();
    a.frame_index = ref.index;
    a.timestamp = ref.timestamp;
    b.frame_index = frame.index;
    b.timestamp = frame.timestamp;
    b.pose = Pose{tv.relative.rotation, tv.relative.translation * scale};
    for (const auto& o : ref.observations) a.features.push_back({o.pixel, o.descriptor, o.landmark_id});
    for (const auto& o : frame.observations) b.features.push_back({o.pixel, o.descriptor, o.landmark_id});
    a.point_ids.assign(a.features.size(), std::nullopt);
    b.point_ids.assign(b.features.size(), std::nullopt);

    // Points enter with the second keyframe and name the first as an observer.
    std::vector<MapPoint> points;
    for (std::size_t i = 0; i < tv.points.size(); ++i) {
      const auto& m = kept[static_cast<std::size_t>(tv.point_pair[i])];
      MapPoint p;
      p.id = out.map.allocate_point_id();
      p.position = tv.points[i] * scale;
      p.descriptor = ref.observations[m.a].descriptor;
      p.observers[a.id] = m.a;
      b.point_ids[m.b] = p.id;
      points.push_back(std::move(p));
    }
    out.map.insert_keyframe(std::move(a));
    out.map.insert_keyframe(std::move(b), std::move(points));

    local_bundle_adjust(out.map, intrinsics_, tracker_.bundle_adjust);
    std::vector<KeyFrameId> ids;
    for (const auto& [id, kf] : out.map.keyframes()) ids.push_back(id);
    cull_observations(out.map, intrinsics_, tracker_.cull_error, ids);

    const KeyFrame& last = out.map.last_keyframe();
    const KeyFrame& first = out.map.keyframes().begin()->second;
    const int gap = std::max(1, last.frame_index - first.frame_index);
    const Pose step = last.pose * first.pose.inverse();
    out.state.mode = TrackMode::tracking;
    out.state.motion = gap == 1 ? step : pose_power(step, 1.0 / gap);
    out.state.pose = last.pose;
    out.state.frame_index = last.frame_index;
    out.state.frames_since_keyframe = 0;
    out.state.reference_count = last.tracked_count();  // every match is an inlier here
    return out;
  }

 private:
  static std::vector<Descriptor> descriptors_of(const Frame& f) {
    std::vector<Descriptor> d;
    d.reserve(f.observations.size());
    for (const auto& o : f.observations) d.push_back(o.descriptor);
    return d;
  }

  void reset(const Frame& frame) {
    reference_ = frame;
    ref_descriptors_ = descriptors_of(frame);
  }

  InitializerConfig config_;
  CameraIntrinsics intrinsics_;
  TrackerConfig tracker_;
  std::uint64_t id_base_;
  std::optional<Frame> reference_;
  std::vector<Descriptor> ref_descriptors_;
  int attempts_ = 0;
};

}  // namespace rvo
