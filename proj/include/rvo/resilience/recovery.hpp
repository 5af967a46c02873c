#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "rvo/frame.hpp"
#include "rvo/fusion/fusion.hpp"
#include "rvo/tracker/matcher.hpp"
#include "rvo/tracker/tracker.hpp"
#include "rvo/worldmap/bundle_adjustment.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo {

struct RecoveryConfig {
  TrackerConfig tracker;
  int min_overlap = 20;       // hypotheses with the old map needed for success
  int fusion_window = 100;    // frames
  int exhaustive_max_hamming = 80;
  double exhaustive_ratio = 0.8;
  double adaptive_sigmas = 3.0;
  bool allow_second_stage = true;
};

enum class RecoveryStatus { success, failure };

/// Everything a recovery needs, owned or shared immutably, so it can run on
/// another thread while forward tracking continues.
struct RecoveryTask {
  int epoch = 0;
  std::shared_ptr<const std::vector<Frame>> buffer;  // oldest first
  std::shared_ptr<const WorldMap> old_map;           // frozen
  WorldMap seed;                                     // new map as initialized
  TrackerState seed_state;
  int origin_frame = 0;  // frame of the new map's first keyframe
  CameraIntrinsics intrinsics;
  KeyFrameId segment_base = 0;  // ids for recovered keyframes and points start here
};

struct RecoveryOutcome {
  RecoveryStatus status = RecoveryStatus::failure;
  int thread_used = 0;  // 1 or 2 on success
  bool first_stage_aborted = false;
  int abort_frame = -1;
  int earliest_frame = -1;  // oldest buffer frame reached
  std::vector<KeyFrameId> recovered_keyframes;
  std::size_t recovered_points = 0;
  std::size_t overlap = 0;
  double elapsed = 0.0;  // seconds
  std::string reason;
  std::vector<std::string> log;
  WorldMap segment;  // seed map extended backwards
};

namespace detail {

struct SweepResult {
  bool completed = false;
  int failed_frame = -1;
  int failed_inliers = 0;
  int earliest = -1;
  std::vector<KeyFrameId> keyframes;
};

inline TrackerState backward_state(const RecoveryTask& task, const WorldMap& map) {
  const KeyFrame& origin = map.keyframes().begin()->second;
  TrackerState st;
  st.mode = TrackMode::tracking;
  st.pose = origin.pose;
  st.frame_index = origin.frame_index;
  if (task.seed_state.motion) st.motion = task.seed_state.motion->inverse();
  st.reference_count = origin.tracked_count();
  return st;
}

inline std::vector<const Frame*> backward_frames(const RecoveryTask& task) {
  std::vector<const Frame*> frames;
  for (auto it = task.buffer->rbegin(); it != task.buffer->rend(); ++it)
    if (it->index < task.origin_frame) frames.push_back(&*it);
  return frames;
}

/// First stage: the forward tracker's machinery, run backwards in time.
inline SweepResult motion_model_sweep(const RecoveryTask& task, WorldMap& map, const RecoveryConfig& cfg) {
  SweepResult out;
  TrackerState st = backward_state(task, map);
  for (const Frame* frame : backward_frames(task)) {
    const TrackResult r = track_frame(st, map, *frame, task.intrinsics, cfg.tracker);
    if (!r.tracked) {
      out.failed_frame = frame->index;
      out.failed_inliers = r.inliers;
      return out;
    }
    out.earliest = frame->index;
    if (keyframe_decision(st, r, cfg.tracker))
      out.keyframes.push_back(insert_tracked_keyframe(st, map, *frame, r, task.intrinsics, cfg.tracker).id);
  }
  out.completed = true;
  return out;
}

/// Second stage: every frame is matched exhaustively (ratio test, relaxed
/// threshold) against the previously processed one and inherits its 3D
/// associations; the pose comes from PnP with a residual-scaled threshold.
/// Associations are then widened by a projected search on the local map.
inline SweepResult exhaustive_sweep(const RecoveryTask& task, WorldMap& map, const RecoveryConfig& cfg) {
  SweepResult out;
  TrackerState st = backward_state(task, map);
  const KeyFrame& origin = map.keyframes().begin()->second;

  std::vector<Descriptor> prev_desc;
  std::vector<std::optional<MapPointId>> prev_points;
  for (std::size_t f = 0; f < origin.features.size(); ++f) {
    prev_desc.push_back(origin.features[f].descriptor);
    prev_points.push_back(origin.point_ids[f]);
  }

  for (const Frame* frame : backward_frames(task)) {
    std::vector<Descriptor> desc;
    desc.reserve(frame->observations.size());
    for (const auto& o : frame->observations) desc.push_back(o.descriptor);
    const auto matches = match_exhaustive_ratio(desc, prev_desc, cfg.exhaustive_max_hamming, cfg.exhaustive_ratio);

    std::vector<PnpMatch> pm;
    std::vector<std::pair<std::size_t, MapPointId>> links;
    for (const auto& m : matches) {
      const auto& pid = prev_points[m.b];
      if (!pid || !map.has_point(*pid)) continue;
      pm.push_back({map.point(*pid).position, frame->observations[m.a].pixel});
      links.push_back({m.a, *pid});
    }
    auto fail = [&](int inliers) {
      out.failed_frame = frame->index;
      out.failed_inliers = inliers;
      return out;
    };
    if (static_cast<int>(pm.size()) < cfg.tracker.min_inliers) return fail(0);

    PnpResult pnp;
    try {
      pnp = estimate_pose_pnp(pm, task.intrinsics, predict_pose(st, frame->index),
                              {.inlier_threshold = cfg.tracker.pnp_threshold,
                               .adaptive_threshold = true,
                               .adaptive_sigmas = cfg.adaptive_sigmas});
    } catch (const Error&) {
      return fail(0);
    }
    if (pnp.inlier_count < cfg.tracker.min_inliers) return fail(pnp.inlier_count);

    TrackResult r;
    r.tracked = true;
    r.pose = pnp.pose;
    r.matched = static_cast<int>(pm.size());
    std::vector<bool> taken(frame->observations.size(), false);
    std::map<MapPointId, bool> linked;
    for (std::size_t i = 0; i < links.size(); ++i)
      if (pnp.inliers[i]) {
        r.associations.push_back(links[i]);
        taken[links[i].first] = true;
        linked[links[i].second] = true;
      }
    // Widen with points of the local map that project near their features.
    {
      const auto local = local_map_points(map, cfg.tracker.local_keyframes);
      std::vector<Vec2> pixels;
      for (const auto& o : frame->observations) pixels.push_back(o.pixel);
      const FeatureGrid grid(pixels, task.intrinsics);
      for (const auto& m : project_and_match(map, local, *frame, grid, pnp.pose, task.intrinsics, pnp.threshold,
                                             cfg.tracker.max_hamming)) {
        if (taken[m.b] || linked.count(local[m.a])) continue;
        const Vec3 pc = pnp.pose * map.point(local[m.a]).position;
        if (pc.z() <= 0.0 || (task.intrinsics.project(pc) - frame->observations[m.b].pixel).norm() > pnp.threshold)
          continue;
        r.associations.push_back({m.b, local[m.a]});
        taken[m.b] = true;
        linked[local[m.a]] = true;
      }
    }
    r.inliers = static_cast<int>(r.associations.size());

    const int gap = std::max(1, std::abs(frame->index - st.frame_index));
    const Pose step = r.pose * st.pose.inverse();
    st.motion = gap == 1 ? step : pose_power(step, 1.0 / gap);
    st.pose = r.pose;
    st.frame_index = frame->index;
    ++st.frames_since_keyframe;
    out.earliest = frame->index;

    prev_desc = std::move(desc);
    prev_points.assign(frame->observations.size(), std::nullopt);
    for (const auto& [obs, pid] : r.associations) prev_points[obs] = pid;

    if (keyframe_decision(st, r, cfg.tracker)) {
      const KeyFrameId id = insert_tracked_keyframe(st, map, *frame, r, task.intrinsics, cfg.tracker).id;
      out.keyframes.push_back(id);
      // Culling may have unlinked some associations; keep only live ones.
      const KeyFrame& kf = map.keyframe(id);
      prev_points = kf.point_ids;
    }
  }
  out.completed = true;
  return out;
}

inline WorldMap segment_seed(const RecoveryTask& task) {
  WorldMap map = task.seed;
  map.unfreeze();
  map.reserve_ids(task.segment_base, task.segment_base);
  return map;
}

}  // namespace detail

/// Backward recovery over the buffer, starting at the new map's first
/// keyframe. The motion-model stage runs first; only when it loses track
/// does the exhaustive stage run, restarting from the new map's origin.
/// After a complete sweep the oldest part of the segment is bundle adjusted
/// and the overlap with the old map is checked. Reads the task only.
inline RecoveryOutcome recover(const RecoveryTask& task, const RecoveryConfig& cfg = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RecoveryOutcome out;
  auto finish = [&]() -> RecoveryOutcome {
    out.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return std::move(out);
  };
  if (!task.buffer || !task.old_map || task.seed.keyframes().size() < 2) {
    out.reason = "incomplete task";
    return finish();
  }

  out.log.push_back("stage 1 start at frame " + std::to_string(task.origin_frame));
  WorldMap map = detail::segment_seed(task);
  detail::SweepResult sweep = detail::motion_model_sweep(task, map, cfg);
  int stage = 1;
  if (!sweep.completed) {
    out.first_stage_aborted = true;
    out.abort_frame = sweep.failed_frame;
    out.log.push_back("stage 1 abort at frame " + std::to_string(sweep.failed_frame) + " with " +
                      std::to_string(sweep.failed_inliers) + " inliers");
    if (!cfg.allow_second_stage) {
      out.reason = "motion-model stage lost track";
      return finish();
    }
    stage = 2;
    out.log.push_back("stage 2 start at frame " + std::to_string(task.origin_frame));
    map = detail::segment_seed(task);
    sweep = detail::exhaustive_sweep(task, map, cfg);
    if (!sweep.completed) {
      out.log.push_back("stage 2 abort at frame " + std::to_string(sweep.failed_frame) + " with " +
                        std::to_string(sweep.failed_inliers) + " inliers");
      out.reason = "both stages lost track";
      return finish();
    }
  }
  out.log.push_back("stage " + std::to_string(stage) + " complete at frame " + std::to_string(sweep.earliest));
  if (!sweep.keyframes.empty()) local_bundle_adjust(map, task.intrinsics, cfg.tracker.bundle_adjust);

  out.earliest_frame = sweep.earliest;
  out.recovered_keyframes = sweep.keyframes;
  for (const auto& [pid, p] : map.points()) out.recovered_points += pid >= task.segment_base ? 1 : 0;
  out.overlap = collect_hypotheses(*task.old_map, map, cfg.fusion_window, cfg.tracker.max_hamming).size();
  out.log.push_back("overlap " + std::to_string(out.overlap));
  out.segment = std::move(map);
  if (static_cast<int>(out.overlap) < cfg.min_overlap) {
    out.reason = "insufficient overlap with the old map";
    return finish();
  }
  out.status = RecoveryStatus::success;
  out.thread_used = stage;
  return finish();
}

}  // namespace rvo
