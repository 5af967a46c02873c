#pragma once

#include <future>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rvo/fusion/fusion.hpp"
#include "rvo/resilience/buffer.hpp"
#include "rvo/resilience/recovery.hpp"
#include "rvo/tracker/odometry.hpp"
#include "rvo/worldgen/world.hpp"

namespace rvo {

enum class Variant { baseline, dual, dual_plus };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::dual: return "dual";
    case Variant::dual_plus: return "dual-plus";
  }
  return "unknown";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "dual") return Variant::dual;
  if (s == "dual-plus" || s == "dual_plus") return Variant::dual_plus;
  throw Error(ErrorCode::InvalidArgument, "unknown variant '" + s + "'");
}

enum class ExecutionMode { sequential, concurrent };

struct PipelineConfig {
  Variant variant = Variant::dual;
  bool recovery_enabled = true;  // ignored for the baseline
  TrackerConfig tracker;
  double enhanced_yield_multiplier = 2.0;
  int debounce = 3;            // consecutive lost frames tolerated before a breakage
  double buffer_seconds = 10.0;
  RecoveryConfig recovery;
  FusionConfig fusion;
  int fusion_delay = 10;       // frames between re-initialization and fusion
  ExecutionMode execution = ExecutionMode::sequential;
  std::uint64_t seed = 0;

  bool recovers() const { return variant != Variant::baseline && recovery_enabled; }
};

enum class EpochOutcome { fused, recovery_failure, fusion_failure, abandoned, no_reinit, disabled };

inline std::string to_string(EpochOutcome o) {
  switch (o) {
    case EpochOutcome::fused: return "fused";
    case EpochOutcome::recovery_failure: return "recovery_failure";
    case EpochOutcome::fusion_failure: return "fusion_failure";
    case EpochOutcome::abandoned: return "abandoned";
    case EpochOutcome::no_reinit: return "no_reinit";
    case EpochOutcome::disabled: return "disabled";
  }
  return "unknown";
}

/// One breakage and what became of it.
struct EpochRecord {
  int epoch = 0;
  int breakage_frame = -1;
  int init_frame = -1;    // frame at which the new map initialized
  int origin_frame = -1;  // first keyframe of the new map
  std::size_t buffer_length = 0;  // K when the recovery was created
  std::size_t extension = 0;      // k_r
  int fusion_frame = -1;
  EpochOutcome outcome = EpochOutcome::no_reinit;
  int thread_used = 0;
  bool first_stage_aborted = false;
  int abort_frame = -1;
  int earliest_frame = -1;
  std::size_t overlap = 0;
  std::optional<SeamReport> seam;
  double elapsed = 0.0;  // recovery wall time, seconds
  std::vector<std::string> log;

  bool recovered() const { return outcome == EpochOutcome::fused; }
};

/// One structured line per epoch.
inline std::string format_epoch(const EpochRecord& e, bool with_timing = true) {
  std::ostringstream s;
  s << "epoch=" << e.epoch << " breakage=" << e.breakage_frame << " init=" << e.init_frame
    << " origin=" << e.origin_frame << " K=" << e.buffer_length << " k_r=" << e.extension
    << " outcome=" << to_string(e.outcome) << " stage=" << e.thread_used
    << " stage1_abort=" << (e.first_stage_aborted ? std::to_string(e.abort_frame) : "none")
    << " earliest=" << e.earliest_frame << " overlap=" << e.overlap;
  if (e.seam) s << " inliers=" << e.seam->inliers << " scale=" << e.seam->transform.scale;
  if (with_timing) s << " elapsed=" << e.elapsed;
  return s.str();
}

struct PipelineResult {
  std::optional<WorldMap> final_map;
  int first_origin_frame = -1;  // first keyframe of the first map
  int first_init_frame = -1;
  int frames = 0;
  int lost_frames = 0;
  std::vector<EpochRecord> epochs;
};

/// Resilient odometry driver: forward tracking with a frame buffer; on a
/// debounced loss the map is frozen and a new one started, and (when enabled)
/// a backward recovery reconnects the two before fusing them.
///
/// Recovery runs either inline or on a separate thread. Its result is only
/// consumed at a fixed frame (`fusion_delay` after re-initialization, or at
/// `finish`), so both execution modes give identical maps.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, CameraIntrinsics intrinsics, double fps)
      : config_(std::move(config)),
        intrinsics_(intrinsics),
        buffer_(BufferQueue::capacity_for(fps, config_.buffer_seconds)),
        odometry_(make_odometry(0)) {}

  const BufferQueue& buffer() const { return buffer_; }
  const Odometry& odometry() const { return odometry_; }
  const std::vector<EpochRecord>& epochs() const { return epochs_; }
  bool awaiting_reinit() const { return awaiting_reinit_; }
  bool recovery_pending() const { return pending_.has_value(); }

  /// `disturbance` perturbs the forward tracker's motion prior for this frame.
  void push(const Frame& frame, const std::optional<Mat3>& disturbance = std::nullopt) {
    ++frames_;
    buffer_.push(frame);
    const OdometryStep step = odometry_.push(frame, disturbance);

    if (step.initialized_now) on_initialized(frame.index);
    if (step.track && !step.track->tracked) {
      ++lost_frames_;
      if (odometry_.state().lost_streak > config_.debounce) on_breakage(frame.index);
    }
    if (pending_ && frame.index >= pending_->fusion_frame) resolve(frame.index);
  }

  PipelineResult finish() {
    if (pending_) resolve(last_frame_seen());
    PipelineResult out;
    if (odometry_.initialized()) out.final_map = odometry_.map();
    out.first_origin_frame = first_origin_;
    out.first_init_frame = first_init_;
    out.frames = frames_;
    out.lost_frames = lost_frames_;
    out.epochs = epochs_;
    return out;
  }

 private:
  struct Pending {
    std::size_t epoch_index;
    int fusion_frame;
    std::shared_ptr<const WorldMap> old_map;
    KeyFrameId segment_base;
    std::optional<RecoveryOutcome> ready;      // sequential mode
    std::future<RecoveryOutcome> future;       // concurrent mode
  };

  static constexpr int kEpochIdShift = 40;

  Odometry make_odometry(int epoch) const {
    InitializerConfig ic = config_.variant == Variant::dual_plus
                               ? InitializerConfig::enhanced(config_.enhanced_yield_multiplier)
                               : InitializerConfig::standard();
    ic.seed = derive_seed(config_.seed, "initializer", static_cast<std::uint64_t>(epoch));
    return Odometry(ic, intrinsics_, config_.tracker, static_cast<std::uint64_t>(epoch) << kEpochIdShift);
  }

  int last_frame_seen() const { return buffer_.empty() ? 0 : buffer_.newest().index; }

  void on_initialized(int frame_index) {
    if (first_origin_ < 0) {
      first_origin_ = odometry_.origin_frame();
      first_init_ = frame_index;
    }
    if (!awaiting_reinit_) return;
    awaiting_reinit_ = false;
    EpochRecord& e = epochs_.back();
    e.init_frame = frame_index;
    e.origin_frame = odometry_.origin_frame();
    e.buffer_length = buffer_.length();
    e.extension = buffer_.extension_count();

    if (config_.recovers() && frozen_) {
      RecoveryTask task;
      task.epoch = e.epoch;
      task.buffer = buffer_.snapshot();
      task.old_map = frozen_;
      task.seed = odometry_.map();
      task.seed_state = odometry_.state();
      task.origin_frame = odometry_.origin_frame();
      task.intrinsics = intrinsics_;
      task.segment_base = (static_cast<KeyFrameId>(e.epoch) << kEpochIdShift) + (KeyFrameId{1} << (kEpochIdShift - 1));

      Pending p;
      p.epoch_index = epochs_.size() - 1;
      p.fusion_frame = frame_index + config_.fusion_delay;
      p.old_map = frozen_;
      p.segment_base = task.segment_base;
      RecoveryConfig rc = config_.recovery;
      rc.tracker = config_.tracker;
      if (config_.execution == ExecutionMode::concurrent) {
        p.future = std::async(std::launch::async, [task = std::move(task), rc]() { return recover(task, rc); });
      } else {
        p.ready = recover(task, rc);
      }
      pending_ = std::move(p);
    } else {
      e.outcome = EpochOutcome::disabled;
    }
    frozen_.reset();
    buffer_.end_extension();
  }

  void on_breakage(int frame_index) {
    if (pending_) {
      // The unresolved recovery is dropped; wait for it so no thread outlives its data.
      if (pending_->future.valid()) pending_->future.get();
      epochs_[pending_->epoch_index].outcome = EpochOutcome::abandoned;
      pending_.reset();
    }
    EpochRecord e;
    e.epoch = static_cast<int>(epochs_.size()) + 1;
    e.breakage_frame = frame_index;
    e.outcome = config_.recovers() ? EpochOutcome::no_reinit : EpochOutcome::disabled;
    epochs_.push_back(e);

    WorldMap old = std::move(odometry_.map());
    old.freeze();
    frozen_ = std::make_shared<const WorldMap>(std::move(old));
    awaiting_reinit_ = true;
    buffer_.begin_extension();
    odometry_ = make_odometry(e.epoch);
  }

  void resolve(int frame_index) {
    Pending p = std::move(*pending_);
    pending_.reset();
    RecoveryOutcome r = p.ready ? std::move(*p.ready) : p.future.get();
    EpochRecord& e = epochs_[p.epoch_index];
    e.fusion_frame = frame_index;
    e.first_stage_aborted = r.first_stage_aborted;
    e.abort_frame = r.abort_frame;
    e.earliest_frame = r.earliest_frame;
    e.overlap = r.overlap;
    e.elapsed = r.elapsed;
    e.log = r.log;
    e.thread_used = r.thread_used;
    if (r.status != RecoveryStatus::success) {
      e.outcome = EpochOutcome::recovery_failure;
      e.log.push_back("recovery failed: " + r.reason);
      return;
    }
    try {
      const WorldMap combined = merge_segment(odometry_.map(), r.segment, p.segment_base);
      const auto hyps = collect_hypotheses(*p.old_map, combined, config_.recovery.fusion_window,
                                           config_.tracker.max_hamming);
      FusionConfig fc = config_.fusion;
      fc.min_hypotheses = config_.recovery.min_overlap;
      fc.seed = derive_seed(config_.seed, "fusion", static_cast<std::uint64_t>(e.epoch));
      FusionResult fused = fuse_maps(*p.old_map, combined, hyps, fc);
      e.seam = fused.seam;
      odometry_.adopt(std::move(fused.map), transform_state(odometry_.state(), fused.seam.transform));
      e.outcome = EpochOutcome::fused;
      e.log.push_back("fused with " + std::to_string(fused.seam.inliers) + " inliers");
    } catch (const Error& err) {
      e.outcome = EpochOutcome::fusion_failure;
      e.thread_used = 0;
      e.log.push_back(std::string("fusion failed: ") + err.what());
    }
  }

  PipelineConfig config_;
  CameraIntrinsics intrinsics_;
  BufferQueue buffer_;
  Odometry odometry_;
  std::vector<EpochRecord> epochs_;
  std::shared_ptr<const WorldMap> frozen_;
  std::optional<Pending> pending_;
  bool awaiting_reinit_ = false;
  int first_origin_ = -1;
  int first_init_ = -1;
  int frames_ = 0;
  int lost_frames_ = 0;
};

/// Runs the pipeline over every frame of a synthetic world. Pose-jitter
/// events disturb the forward tracker's motion prior.
inline PipelineResult run_pipeline(const World& world, const PipelineConfig& config) {
  Pipeline p(config, world.intrinsics, world.fps);
  for (int f = 0; f < world.frame_count(); ++f) p.push(observe(world, f), pose_jitter_at(world, f));
  return p.finish();
}

}  // namespace rvo
