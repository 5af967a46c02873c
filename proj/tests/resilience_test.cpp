#include <gtest/gtest.h>

#include <chrono>

#include "rvo/eval/experiment.hpp"
#include "rvo/resilience/buffer.hpp"
#include "rvo/resilience/pipeline.hpp"
#include "rvo/resilience/recovery.hpp"

using namespace rvo;

namespace {

Frame numbered(int i) { return Frame{i, 0.1 * i, {}}; }

std::vector<int> indices(const BufferQueue& b) {
  std::vector<int> out;
  for (const auto& f : b.frames()) out.push_back(f.index);
  return out;
}

std::vector<int> range(int lo, int hi) {
  std::vector<int> v;
  for (int i = lo; i <= hi; ++i) v.push_back(i);
  return v;
}

Scenario jitter_scenario(std::uint64_t seed, int frame, int frames = 250,
                         TrajectoryKind kind = TrajectoryKind::straight) {
  Scenario s;
  s.id = "jitter";
  s.seed = seed;
  s.frames = frames;
  s.trajectory = kind;
  s.events.push_back({frame, frame, EventKind::pose_jitter, 12.0});
  return s;
}

/// A breakage staged by hand: forward odometry until a debounced loss, then
/// a fresh map initialized on the following frames, and the recovery task
/// the pipeline would hand over.
struct Staged {
  World world;
  RecoveryTask task;
  int breakage = -1;
};

Staged stage_breakage(const Scenario& s, std::size_t buffer_frames = 100) {
  Staged out;
  out.world = generate_world(s);
  const World& w = out.world;
  BufferQueue buffer(buffer_frames);
  InitializerConfig ic;
  ic.seed = s.seed;
  Odometry forward(ic, w.intrinsics);
  int f = 0;
  for (; f < w.frame_count(); ++f) {
    const Frame frame = observe(w, f);
    buffer.push(frame);
    const OdometryStep step = forward.push(frame, pose_jitter_at(w, f));
    if (step.track && !step.track->tracked && forward.state().lost_streak > 3) break;
  }
  if (f == w.frame_count()) return out;
  out.breakage = f;
  WorldMap old = forward.map();
  old.freeze();
  buffer.begin_extension();

  ic.seed = s.seed + 1;
  Odometry fresh(ic, w.intrinsics, {}, KeyFrameId{1} << 40);
  for (++f; f < w.frame_count() && !fresh.initialized(); ++f) {
    const Frame frame = observe(w, f);
    buffer.push(frame);
    fresh.push(frame);
  }
  if (!fresh.initialized()) return out;
  out.task.epoch = 1;
  out.task.buffer = buffer.snapshot();
  out.task.old_map = std::make_shared<const WorldMap>(std::move(old));
  out.task.seed = fresh.map();
  out.task.seed_state = fresh.state();
  out.task.origin_frame = fresh.origin_frame();
  out.task.intrinsics = w.intrinsics;
  out.task.segment_base = (KeyFrameId{1} << 40) + (KeyFrameId{1} << 39);
  return out;
}

bool same_map(const WorldMap& a, const WorldMap& b) {
  if (a.keyframes().size() != b.keyframes().size() || a.points().size() != b.points().size()) return false;
  for (const auto& [id, kf] : a.keyframes()) {
    if (!b.has_keyframe(id)) return false;
    const KeyFrame& o = b.keyframe(id);
    if (o.pose.rotation != kf.pose.rotation || o.pose.translation != kf.pose.translation ||
        o.point_ids != kf.point_ids)
      return false;
  }
  for (const auto& [id, p] : a.points()) {
    if (!b.has_point(id)) return false;
    if (b.point(id).position != p.position || b.point(id).observers != p.observers) return false;
  }
  return a.status() == b.status();
}

bool same_trajectory(const Trajectory& a, const Trajectory& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.poses[i].timestamp != b.poses[i].timestamp || a.poses[i].position != b.poses[i].position ||
        a.poses[i].rotation != b.poses[i].rotation)
      return false;
  return true;
}

}  // namespace

TEST(BufferQueue, CapacityFromFrameRate) {
  EXPECT_EQ(BufferQueue::capacity_for(10.0), 100u);
  EXPECT_EQ(BufferQueue::capacity_for(30.0), 300u);
  EXPECT_EQ(BufferQueue::capacity_for(10.0, 2.5), 25u);
  EXPECT_THROW(BufferQueue::capacity_for(0.0), Error);
  EXPECT_THROW(BufferQueue(0), Error);
}

TEST(BufferQueue, RollingEvictsOldestFirst) {
  BufferQueue b(5);
  EXPECT_TRUE(b.empty());
  for (int i = 0; i < 5; ++i) {
    b.push(numbered(i));
    EXPECT_EQ(b.length(), static_cast<std::size_t>(i + 1));
  }
  EXPECT_EQ(indices(b), range(0, 4));
  for (int i = 5; i < 12; ++i) {
    b.push(numbered(i));
    EXPECT_EQ(b.length(), 5u);
    EXPECT_EQ(b.oldest().index, i - 4);
    EXPECT_EQ(b.newest().index, i);
  }
  EXPECT_EQ(b.mode(), BufferMode::rolling);
  EXPECT_EQ(b.extension_count(), 0u);
}

TEST(BufferQueue, ExtendingKeepsEverything) {
  BufferQueue b(5);
  for (int i = 0; i < 8; ++i) b.push(numbered(i));
  b.begin_extension();
  EXPECT_EQ(b.mode(), BufferMode::extending);
  EXPECT_EQ(b.length_at_breakage(), 5u);
  for (int i = 8; i < 20; ++i) {
    b.push(numbered(i));
    EXPECT_EQ(b.length(), 5u + (i - 7));
    EXPECT_EQ(b.extension_count(), static_cast<std::size_t>(i - 7));
  }
  EXPECT_EQ(indices(b), range(3, 19));

  const auto snap = b.snapshot();
  b.end_extension();
  EXPECT_EQ(b.mode(), BufferMode::rolling);
  EXPECT_EQ(indices(b), range(15, 19));
  ASSERT_EQ(snap->size(), 17u);  // the snapshot is independent of the queue
  EXPECT_EQ(snap->front().index, 3);
  b.push(numbered(20));
  EXPECT_EQ(indices(b), range(16, 20));
}

TEST(BufferQueue, BreakageBeforeFillExtendsFromShortLength) {
  BufferQueue b(10);
  for (int i = 0; i < 4; ++i) b.push(numbered(i));
  b.begin_extension();
  for (int i = 4; i < 9; ++i) b.push(numbered(i));
  EXPECT_EQ(b.length(), 9u);
  EXPECT_EQ(b.length_at_breakage(), 4u);
  b.end_extension();
  EXPECT_EQ(b.length(), 9u);
}

TEST(BufferQueue, ExtendedLengthIsCapacityPlusExtension) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng.below(150);
    BufferQueue b(k);
    int next = 0;
    const int warm = static_cast<int>(k + rng.below(100));
    for (int i = 0; i < warm; ++i) b.push(numbered(next++));
    b.begin_extension();
    const std::size_t kr = rng.below(300);
    for (std::size_t i = 0; i < kr; ++i) b.push(numbered(next++));
    ASSERT_EQ(b.length(), k + kr);
    ASSERT_EQ(b.extension_count(), kr);
    EXPECT_EQ(b.oldest().index, warm - static_cast<int>(k));
  }
}

TEST(BufferQueue, ReextensionResetsCount) {
  BufferQueue b(3);
  for (int i = 0; i < 3; ++i) b.push(numbered(i));
  b.begin_extension();
  b.push(numbered(3));
  b.begin_extension();  // a second breakage before re-initialization
  EXPECT_EQ(b.extension_count(), 0u);
  EXPECT_EQ(b.length_at_breakage(), 4u);
  b.push(numbered(4));
  EXPECT_EQ(b.length(), 5u);
}

TEST(Pipeline, SingleFrameDropoutIsDebounced) {
  Scenario s;
  s.seed = 3;
  s.frames = 150;
  s.events.push_back({80, 80, EventKind::texture_dropout, 0.0});
  const World w = generate_world(s);
  PipelineConfig pc;
  pc.seed = 3;
  const PipelineResult r = run_pipeline(w, pc);
  EXPECT_GE(r.lost_frames, 1);
  EXPECT_TRUE(r.epochs.empty());

  pc.debounce = 0;
  EXPECT_EQ(run_pipeline(w, pc).epochs.size(), 1u);
}

TEST(Pipeline, BreakageFreezesMapAndExtendsBuffer) {
  const World w = generate_world(jitter_scenario(4, 120));
  PipelineConfig pc;
  pc.seed = 4;
  Pipeline p(pc, w.intrinsics, w.fps);
  int f = 0;
  for (; f < w.frame_count() && !p.awaiting_reinit(); ++f) p.push(observe(w, f), pose_jitter_at(w, f));
  ASSERT_TRUE(p.awaiting_reinit());
  ASSERT_EQ(p.epochs().size(), 1u);
  EXPECT_EQ(p.epochs()[0].breakage_frame, f - 1);
  EXPECT_EQ(p.buffer().mode(), BufferMode::extending);
  EXPECT_EQ(p.buffer().length_at_breakage(), 100u);
  EXPECT_FALSE(p.odometry().initialized());

  for (; f < w.frame_count() && p.awaiting_reinit(); ++f) p.push(observe(w, f), pose_jitter_at(w, f));
  ASSERT_FALSE(p.awaiting_reinit());
  const EpochRecord& e = p.epochs()[0];
  EXPECT_EQ(e.init_frame, f - 1);
  EXPECT_EQ(e.buffer_length, 100u + e.extension);
  EXPECT_EQ(e.extension, static_cast<std::size_t>(e.init_frame - e.breakage_frame));
  EXPECT_EQ(p.buffer().mode(), BufferMode::rolling);
  EXPECT_TRUE(p.recovery_pending());
}

TEST(Pipeline, SecondBreakageAbandonsPendingRecovery) {
  Scenario s = jitter_scenario(2, 100);
  s.events.push_back({120, 120, EventKind::pose_jitter, 12.0});
  PipelineConfig pc;
  pc.seed = 2;
  pc.fusion_delay = 40;
  const PipelineResult r = run_pipeline(generate_world(s), pc);
  ASSERT_EQ(r.epochs.size(), 2u);
  EXPECT_EQ(r.epochs[0].outcome, EpochOutcome::abandoned);
  EXPECT_EQ(r.epochs[1].breakage_frame - r.epochs[0].breakage_frame, 20);
  EXPECT_EQ(r.epochs[1].outcome, EpochOutcome::fused);
}

TEST(Recovery, JitterBreakageRecoversWithFirstStage) {
  const Staged st = stage_breakage(jitter_scenario(6, 150));
  ASSERT_GE(st.breakage, 150);
  ASSERT_TRUE(st.task.buffer);
  const RecoveryOutcome r = recover(st.task);
  ASSERT_EQ(r.status, RecoveryStatus::success) << r.reason;
  EXPECT_EQ(r.thread_used, 1);
  EXPECT_FALSE(r.first_stage_aborted);
  EXPECT_EQ(r.earliest_frame, st.task.buffer->front().index);
  EXPECT_GE((st.task.origin_frame - r.earliest_frame) / st.world.fps, 10.0);
  EXPECT_GE(static_cast<int>(r.overlap), RecoveryConfig{}.min_overlap);
  EXPECT_EQ(r.segment.integrity_error(), "");

  // Recovered keyframes against ground truth.
  std::vector<PointPair> pairs;
  Vec3 lo = Vec3::Constant(1e300), hi = -lo;
  for (const auto& [id, kf] : r.segment.keyframes()) {
    if (id < st.task.segment_base) continue;
    const Vec3 gt = st.world.trajectory[kf.frame_index].pose.center();
    pairs.push_back({kf.pose.center(), gt});
    lo = lo.cwiseMin(gt);
    hi = hi.cwiseMax(gt);
  }
  ASSERT_GE(pairs.size(), 10u);
  EXPECT_EQ(pairs.size(), r.recovered_keyframes.size());
  const Sim3 align = horn_align(pairs);
  double worst = 0.0;
  for (const auto& p : pairs) worst = std::max(worst, (align * p.source - p.target).norm());
  EXPECT_LT(worst, 0.02 * (hi - lo).norm());
}

TEST(Recovery, LeavesTheOldMapUntouched) {
  const Staged st = stage_breakage(jitter_scenario(7, 150));
  ASSERT_TRUE(st.task.old_map);
  const WorldMap before = *st.task.old_map;
  const WorldMap seed_before = st.task.seed;
  recover(st.task);
  EXPECT_TRUE(same_map(before, *st.task.old_map));
  EXPECT_TRUE(same_map(seed_before, st.task.seed));
  EXPECT_TRUE(st.task.old_map->frozen());
}

TEST(Recovery, FeaturelessBufferFails) {
  // Every buffered frame before the new map is inside a total texture dropout.
  Staged st = stage_breakage(jitter_scenario(8, 150));
  ASSERT_TRUE(st.task.buffer);
  auto blank = std::make_shared<std::vector<Frame>>(*st.task.buffer);
  for (auto& f : *blank)
    if (f.index < st.task.origin_frame) f.observations.clear();
  st.task.buffer = blank;
  const RecoveryOutcome r = recover(st.task);
  EXPECT_EQ(r.status, RecoveryStatus::failure);
  EXPECT_TRUE(r.first_stage_aborted);
  EXPECT_EQ(r.thread_used, 0);
  ASSERT_GE(r.log.size(), 4u);
  EXPECT_NE(r.log[3].find("stage 2 abort"), std::string::npos);
}

TEST(Recovery, FirstStageOnlyConfigurationStopsAtTheAbort) {
  Scenario s;
  s.seed = 4;
  s.frames = 250;
  s.events.push_back({150, 156, EventKind::noise_burst, 20.0});
  const Staged st = stage_breakage(s);
  ASSERT_TRUE(st.task.buffer);
  RecoveryConfig rc;
  rc.allow_second_stage = false;
  const RecoveryOutcome r = recover(st.task, rc);
  EXPECT_EQ(r.status, RecoveryStatus::failure);
  EXPECT_TRUE(r.first_stage_aborted);
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(Pipeline, TextureDropoutInBufferIsRecoveryFailure) {
  Scenario s;
  s.seed = 9;
  s.frames = 250;
  s.events.push_back({100, 140, EventKind::texture_dropout, 0.0});
  PipelineConfig pc;
  pc.seed = 9;
  const PipelineResult r = run_pipeline(generate_world(s), pc);
  ASSERT_GE(r.epochs.size(), 1u);
  EXPECT_EQ(r.epochs[0].outcome, EpochOutcome::recovery_failure);
  EXPECT_TRUE(r.epochs[0].first_stage_aborted);
  ASSERT_TRUE(r.final_map);
  EXPECT_GT(r.final_map->keyframes().begin()->second.frame_index, 140);  // disconnected new map
}

TEST(Pipeline, NoiseBurstNeedsTheSecondStage) {
  int second = 0;
  for (std::uint64_t seed = 2; seed < 12; ++seed) {
    Scenario s;
    s.seed = seed;
    s.frames = 250;
    s.trajectory = static_cast<TrajectoryKind>(seed % 4);
    s.events.push_back({150, 156, EventKind::noise_burst, 20.0});
    PipelineConfig pc;
    pc.seed = seed;
    const PipelineResult r = run_pipeline(generate_world(s), pc);
    for (const auto& e : r.epochs) {
      if (!e.recovered()) continue;
      EXPECT_EQ(e.thread_used, 2) << format_epoch(e);
      EXPECT_TRUE(e.first_stage_aborted);
      // The abort is logged before the second stage starts.
      std::size_t abort_at = e.log.size(), start_at = e.log.size();
      for (std::size_t i = 0; i < e.log.size(); ++i) {
        if (e.log[i].rfind("stage 1 abort", 0) == 0) abort_at = std::min(abort_at, i);
        if (e.log[i].rfind("stage 2 start", 0) == 0) start_at = std::min(start_at, i);
      }
      EXPECT_LT(abort_at, start_at);
      EXPECT_LT(start_at, e.log.size());
      ++second;
    }
  }
  EXPECT_GE(second, 7);
}

TEST(Pipeline, JitterIsFusedAndCoverageRestored) {
  const Scenario s = jitter_scenario(10, 150);
  const World w = generate_world(s);
  PipelineConfig pc;
  pc.seed = 10;
  const TrialReport t = run_trial(w, pc);
  ASSERT_EQ(t.epochs.size(), 1u);
  const EpochRecord& e = t.epochs[0];
  EXPECT_EQ(e.outcome, EpochOutcome::fused) << format_epoch(e);
  EXPECT_EQ(e.thread_used, 1);
  ASSERT_TRUE(e.seam);
  EXPECT_GE(e.seam->inliers, 20u);
  EXPECT_FALSE(t.failed);
  EXPECT_GT(t.coverage, 0.95);

  pc.variant = Variant::baseline;
  const TrialReport b = run_trial(w, pc);
  EXPECT_TRUE(b.failed);
  EXPECT_EQ(b.epochs[0].outcome, EpochOutcome::disabled);
}

TEST(Pipeline, ConcurrentMatchesSequential) {
  for (std::uint64_t seed : {11u, 13u}) {
    const World w = generate_world(jitter_scenario(seed, 120, 220, TrajectoryKind::loop));
    PipelineConfig pc;
    pc.seed = seed;
    const PipelineResult a = run_pipeline(w, pc);
    pc.execution = ExecutionMode::concurrent;
    const PipelineResult b = run_pipeline(w, pc);
    ASSERT_EQ(a.epochs.size(), b.epochs.size());
    ASSERT_EQ(a.epochs.size(), 1u);
    EXPECT_EQ(a.epochs[0].outcome, EpochOutcome::fused);
    for (std::size_t i = 0; i < a.epochs.size(); ++i)
      EXPECT_EQ(format_epoch(a.epochs[i], false), format_epoch(b.epochs[i], false));
    ASSERT_TRUE(a.final_map && b.final_map);
    EXPECT_TRUE(same_map(*a.final_map, *b.final_map));
  }
}

TEST(Pipeline, DisabledRecoveryMatchesBaseline) {
  for (std::uint64_t seed : {13u, 14u, 15u}) {
    const World w = generate_world(jitter_scenario(seed, 100, 200, TrajectoryKind::kitti_like));
    PipelineConfig pc;
    pc.seed = seed;
    pc.variant = Variant::baseline;
    const PipelineResult base = run_pipeline(w, pc);
    pc.variant = Variant::dual;
    pc.recovery_enabled = false;
    const PipelineResult off = run_pipeline(w, pc);
    ASSERT_TRUE(base.final_map && off.final_map);
    EXPECT_TRUE(same_trajectory(keyframe_trajectory(*base.final_map), keyframe_trajectory(*off.final_map)));
    EXPECT_EQ(base.epochs.size(), off.epochs.size());
    EXPECT_EQ(base.lost_frames, off.lost_frames);
  }
}

TEST(Recovery, TimeGrowsAtMostLinearlyWithBufferLength) {
  const Scenario s = jitter_scenario(16, 250, 330);
  auto timed = [&](std::size_t k) {
    const Staged st = stage_breakage(s, k);
    EXPECT_TRUE(st.task.buffer);
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      const RecoveryOutcome r = recover(st.task);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      EXPECT_EQ(r.status, RecoveryStatus::success) << r.reason;
    }
    return std::pair{best, st.task.buffer->size()};
  };
  const auto [t100, k100] = timed(100);
  const auto [t200, k200] = timed(200);
  EXPECT_GT(k200, k100 + 90);
  EXPECT_LE(t200 / t100, 2.5) << t100 << " s vs " << t200 << " s";
}

TEST(Variant, Names) {
  for (auto v : {Variant::baseline, Variant::dual, Variant::dual_plus}) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_EQ(to_string(Variant::dual_plus), "dual-plus");
  EXPECT_THROW(parse_variant("triple"), Error);
}
