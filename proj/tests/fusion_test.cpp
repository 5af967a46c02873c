#include <gtest/gtest.h>

#include <chrono>
#include <map>
#include <set>

#include "rvo/eval/trajectory.hpp"
#include "rvo/fusion/fusion.hpp"
#include "test_helpers.hpp"
#include "world_helpers.hpp"

using namespace rvo;
using rvo::test::random_sim3;
using rvo::test::transform_map;
using rvo::test::truth_map;

namespace {

constexpr KeyFrameId kNewBase = KeyFrameId{1} << 40;

Descriptor random_descriptor(Rng& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

Descriptor corrupted(Descriptor d, double flip_rate, Rng& rng) {
  for (int b = 0; b < Descriptor::kBits; ++b)
    if (rng.uniform() < flip_rate) d.flip(b);
  return d;
}

/// Builds a map from (frame, position, descriptor) tuples, one keyframe per
/// distinct frame, each point observed once.
struct MapBuilder {
  struct Entry {
    Vec3 position;
    Descriptor descriptor;
    LandmarkId landmark;
  };
  std::map<int, std::vector<Entry>> by_frame;

  void add(int frame, const Vec3& p, const Descriptor& d, LandmarkId lm) { by_frame[frame].push_back({p, d, lm}); }

  WorldMap build(std::uint64_t id_base, std::map<MapPointId, LandmarkId>* landmarks = nullptr) const {
    WorldMap map(id_base);
    for (const auto& [frame, entries] : by_frame) {
      KeyFrame kf;
      kf.id = map.allocate_keyframe_id();
      kf.frame_index = frame;
      kf.timestamp = frame * 0.1;
      kf.pose = Pose::from_center(Mat3::Identity(), Vec3(0, 0, frame));
      std::vector<MapPoint> fresh;
      for (const auto& e : entries) {
        MapPoint p;
        p.id = map.allocate_point_id();
        p.position = e.position;
        p.descriptor = e.descriptor;
        kf.features.push_back({Vec2(320, 240), e.descriptor, e.landmark});
        kf.point_ids.push_back(p.id);
        if (landmarks) (*landmarks)[p.id] = e.landmark;
        fresh.push_back(p);
      }
      map.insert_keyframe(std::move(kf), std::move(fresh));
    }
    return map;
  }
};

struct PlantedPair {
  WorldMap old_map, new_map;
  std::map<MapPointId, LandmarkId> old_landmark, new_landmark;
  Sim3 new_to_old;
};

/// `overlap` landmarks seen by both maps (old keyframes at frames 0..90,
/// new ones at 60..150), plus points unique to each map. The new map lives
/// in a frame related to the old one by a random similarity.
PlantedPair planted_pair(std::uint64_t seed, int overlap, int old_only, int new_only, double flip_rate) {
  Rng rng(seed);
  PlantedPair out;
  out.new_to_old = random_sim3(rng);
  const Sim3 old_to_new = out.new_to_old.inverse();
  MapBuilder a, b;
  LandmarkId lm = 0;
  auto position = [&]() { return Vec3(rng.uniform(-20, 20), rng.uniform(-5, 5), rng.uniform(0, 150)); };
  for (int i = 0; i < overlap; ++i, ++lm) {
    const Vec3 p = position();
    const Descriptor d = random_descriptor(rng);
    a.add(60 + 10 * static_cast<int>(rng.below(4)), p, corrupted(d, flip_rate, rng), lm);
    b.add(60 + 10 * static_cast<int>(rng.below(4)), old_to_new * p, corrupted(d, flip_rate, rng), lm);
  }
  for (int i = 0; i < old_only; ++i, ++lm)
    a.add(10 * static_cast<int>(rng.below(10)), position(), random_descriptor(rng), lm);
  for (int i = 0; i < new_only; ++i, ++lm)
    b.add(60 + 10 * static_cast<int>(rng.below(10)), old_to_new * position(), random_descriptor(rng), lm);
  out.old_map = a.build(0, &out.old_landmark);
  out.new_map = b.build(kNewBase, &out.new_landmark);
  return out;
}

std::vector<MatchHypothesis> true_hypotheses(const WorldMap& old_map, const WorldMap& new_map) {
  std::map<LandmarkId, MapPointId> old_by_landmark;
  for (const auto& [kid, kf] : old_map.keyframes())
    for (std::size_t f = 0; f < kf.features.size(); ++f)
      if (kf.point_ids[f]) old_by_landmark.emplace(kf.features[f].truth, *kf.point_ids[f]);
  std::set<MapPointId> used;
  std::vector<MatchHypothesis> out;
  for (const auto& [kid, kf] : new_map.keyframes())
    for (std::size_t f = 0; f < kf.features.size(); ++f) {
      if (!kf.point_ids[f] || used.count(*kf.point_ids[f])) continue;
      const auto it = old_by_landmark.find(kf.features[f].truth);
      if (it == old_by_landmark.end()) continue;
      used.insert(*kf.point_ids[f]);
      out.push_back({.old_point = it->second, .new_point = *kf.point_ids[f]});
    }
  return out;
}

World fusion_world(std::uint64_t seed) {
  Scenario s;
  s.seed = seed;
  s.frames = 100;
  s.pixel_noise = 0.0;
  s.outlier_rate = 0.0;
  s.descriptor_flip_rate = 0.0;
  s.landmark_density = 0.004;
  return generate_world(s);
}

}  // namespace

TEST(CollectHypotheses, WindowRestrictsCandidates) {
  Rng rng(1);
  const Descriptor d = random_descriptor(rng);
  Descriptor near = d;
  for (int b = 0; b < 5; ++b) near.flip(b * 40);

  MapBuilder nb;
  nb.add(480, Vec3(0, 0, 1), d, 0);
  const WorldMap new_map = nb.build(kNewBase);

  // Exact descriptor matches just outside the window, a worse one on its edge.
  MapBuilder ob;
  ob.add(429, Vec3(1, 0, 0), d, 1);
  ob.add(531, Vec3(2, 0, 0), d, 2);
  ob.add(430, Vec3(3, 0, 0), near, 3);
  std::map<MapPointId, LandmarkId> lm;
  const WorldMap old_map = ob.build(0, &lm);

  const auto h = collect_hypotheses(old_map, new_map, 50);
  ASSERT_EQ(h.size(), 1u);
  EXPECT_EQ(lm.at(h[0].old_point), 3u);
  EXPECT_EQ(h[0].distance, 5);
  EXPECT_EQ(h[0].frame_gap, 50);

  MapBuilder outside;
  outside.add(429, Vec3(1, 0, 0), d, 1);
  outside.add(531, Vec3(2, 0, 0), d, 2);
  EXPECT_TRUE(collect_hypotheses(outside.build(0), new_map, 50).empty());
  EXPECT_EQ(collect_hypotheses(outside.build(0), new_map, 51).size(), 1u);
}

TEST(CollectHypotheses, DisjointFrameRangesGiveNothing) {
  Rng rng(2);
  MapBuilder a, b;
  for (int i = 0; i < 50; ++i) {
    const Descriptor d = random_descriptor(rng);
    a.add(10 * (i % 5), Vec3::Random(), d, i);
    b.add(1000 + 10 * (i % 5), Vec3::Random(), d, i);
  }
  EXPECT_TRUE(collect_hypotheses(a.build(0), b.build(kNewBase), 100).empty());
  EXPECT_TRUE(collect_hypotheses(WorldMap{}, b.build(kNewBase), 100).empty());
}

TEST(CollectHypotheses, PlantedOverlapIsFoundWithFewFalseMatches) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const PlantedPair p = planted_pair(seed, 100, 400, 400, 0.02);
    const auto h = collect_hypotheses(p.old_map, p.new_map, 100);
    int correct = 0, wrong = 0;
    for (const auto& m : h) {
      EXPECT_LE(m.frame_gap, 100);
      (p.old_landmark.at(m.old_point) == p.new_landmark.at(m.new_point) ? correct : wrong)++;
    }
    EXPECT_GE(correct, 90) << "seed " << seed;
    EXPECT_LE(wrong, 5) << "seed " << seed;
  }
}

TEST(FuseMaps, ExactTransformReproducesOldMap) {
  const World w = fusion_world(6);
  const WorldMap old_map = truth_map(w, 10, 3);
  Rng rng(6);
  const Sim3 truth = random_sim3(rng);
  const WorldMap new_map = transform_map(old_map, truth.inverse());

  std::vector<MatchHypothesis> hyps;
  for (const auto& [pid, p] : old_map.points()) hyps.push_back({.old_point = pid, .new_point = pid});
  const FusionResult r = fuse_maps(old_map, new_map, hyps);

  EXPECT_EQ(r.seam.inliers, hyps.size());
  EXPECT_LT(test::sim3_error(r.seam.transform, truth), 1e-9);
  EXPECT_EQ(r.map.points().size(), old_map.points().size());
  for (const auto& [pid, p] : r.map.points())
    EXPECT_LT((p.position - old_map.point(pid).position).norm(), 1e-9);
  for (const auto& [nid, mid] : r.keyframe_ids) {
    const KeyFrame& kf = r.map.keyframe(mid);
    const KeyFrame& orig = old_map.keyframe(nid);
    EXPECT_EQ(kf.frame_index, orig.frame_index);
    EXPECT_LT((kf.pose.center() - orig.pose.center()).norm(), 1e-9);
    EXPECT_LT((kf.pose.rotation - orig.pose.rotation).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_EQ(r.map.integrity_error(), "");
  EXPECT_FALSE(r.map.frozen());
}

TEST(FuseMaps, SpuriousHypothesesStillRecoverTheSeam) {
  int good = 0;
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const World w = fusion_world(seed);
    WorldMap old_map = truth_map(w, 21, 2, 0);
    old_map.freeze();
    Rng rng(seed);
    const Sim3 truth = random_sim3(rng);
    const WorldMap new_map = transform_map(truth_map(w, 21, 2, 30, kNewBase), truth.inverse());

    auto hyps = true_hypotheses(old_map, new_map);
    ASSERT_GE(hyps.size(), 60u);
    hyps.resize(60);
    std::vector<MapPointId> old_ids, new_ids;
    for (const auto& [pid, p] : old_map.points()) old_ids.push_back(pid);
    for (const auto& [pid, p] : new_map.points()) new_ids.push_back(pid);
    for (int i = 0; i < 40; ++i)
      hyps.push_back({.old_point = old_ids[rng.below(old_ids.size())], .new_point = new_ids[rng.below(new_ids.size())]});

    const FusionResult r = fuse_maps(old_map, new_map, hyps, {.seed = seed});
    ASSERT_EQ(r.map.integrity_error(), "");
    const Vec3 c = w.trajectory[40].pose.center();
    if (test::sim3_within(r.seam.transform, truth, 0.01, c.norm())) ++good;

    // Continuity across the seam.
    const Trajectory before = keyframe_trajectory(old_map);
    std::vector<double> gaps;
    for (std::size_t i = 1; i < before.size(); ++i)
      gaps.push_back((before.poses[i].position - before.poses[i - 1].position).norm());
    const double limit = 3.0 * median(gaps);
    const Trajectory merged = keyframe_trajectory(r.map);
    for (std::size_t i = 1; i < merged.size(); ++i)
      EXPECT_LT((merged.poses[i].position - merged.poses[i - 1].position).norm(), limit);

    // Scale across the seam: last old-only keyframe to first new-only one.
    const auto& last_old = w.trajectory[40].pose;
    const auto& first_new = w.trajectory[42].pose;
    const double gt = (first_new.center() - last_old.center()).norm();
    double est = -1.0;
    for (const auto& p : merged.poses)
      if (std::abs(p.timestamp - w.trajectory[42].timestamp) < 1e-9) est = (p.position - merged.poses[20].position).norm();
    ASSERT_GT(est, 0.0);
    EXPECT_NEAR(est / gt, 1.0, 0.05);
  }
  EXPECT_EQ(good, 10);
}

TEST(FuseMaps, TooFewHypothesesFail) {
  const World w = fusion_world(7);
  const WorldMap old_map = truth_map(w, 6, 3);
  std::vector<MatchHypothesis> hyps;
  for (const auto& [pid, p] : old_map.points()) {
    hyps.push_back({.old_point = pid, .new_point = pid});
    if (hyps.size() == 5) break;
  }
  try {
    fuse_maps(old_map, old_map, hyps, {.min_hypotheses = 20});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FusionFailure);
  }
}

TEST(FuseMaps, RigidMotionOfTheNewMapIsAbsorbed) {
  const World w = fusion_world(8);
  const WorldMap old_map = truth_map(w, 21, 2, 0);
  Rng rng(8);
  WorldMap new_map = transform_map(truth_map(w, 21, 2, 30, kNewBase), random_sim3(rng).inverse());
  auto hyps = true_hypotheses(old_map, new_map);
  std::vector<MapPointId> old_ids;
  for (const auto& [pid, p] : old_map.points()) old_ids.push_back(pid);
  for (std::size_t i = 0; i < hyps.size(); i += 3) hyps[i].old_point = old_ids[rng.below(old_ids.size())];

  const Sim3 rigid{1.0, test::random_rotation(rng), Vec3(rng.uniform(-50, 50), rng.uniform(-50, 50), 0.0)};
  const FusionResult a = fuse_maps(old_map, new_map, hyps, {.seed = 3});
  const FusionResult b = fuse_maps(old_map, transform_map(new_map, rigid), hyps, {.seed = 3});
  ASSERT_EQ(a.map.points().size(), b.map.points().size());
  ASSERT_EQ(a.map.keyframes().size(), b.map.keyframes().size());
  for (const auto& [pid, p] : a.map.points()) EXPECT_LT((p.position - b.map.point(pid).position).norm(), 1e-6);
  for (const auto& [kid, kf] : a.map.keyframes())
    EXPECT_LT((kf.pose.center() - b.map.keyframe(kid).pose.center()).norm(), 1e-6);
}

TEST(FuseMaps, OldMapUntouchedAndIdsSingleOwned) {
  const PlantedPair p = planted_pair(9, 100, 200, 200, 0.02);
  const WorldMap before = p.old_map;
  const auto h = collect_hypotheses(p.old_map, p.new_map, 100);
  const FusionResult r = fuse_maps(p.old_map, p.new_map, h);
  EXPECT_EQ(r.map.integrity_error(), "");

  ASSERT_EQ(p.old_map.points().size(), before.points().size());
  for (const auto& [pid, pt] : before.points()) EXPECT_EQ(p.old_map.point(pid).position, pt.position);

  std::set<MapPointId> targets;
  for (const auto& [from, to] : r.point_ids) targets.insert(to);
  EXPECT_EQ(targets.size(), r.point_ids.size());
  EXPECT_EQ(r.map.points().size(), before.points().size() + p.new_map.points().size() - r.seam.merged_points);
  for (const auto& [old_id, merged_id] : r.keyframe_ids) EXPECT_GE(merged_id, before.next_keyframe_id());
}

TEST(FuseMaps, TenThousandPointsFuseQuickly) {
  const PlantedPair p = planted_pair(11, 1000, 4500, 4500, 0.02);
  const auto h = collect_hypotheses(p.old_map, p.new_map, 100);
  const auto t0 = std::chrono::steady_clock::now();
  const FusionResult r = fuse_maps(p.old_map, p.new_map, h);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_GE(r.seam.inliers, 900u);
  EXPECT_LT(ms, 200.0);
}

TEST(TransformState, ScalesMotionTranslation) {
  TrackerState st;
  st.pose = Pose::from_center(Mat3::Identity(), Vec3(1, 2, 3));
  st.motion = Pose{so3_exp(Vec3(0, 0.1, 0)), Vec3(0, 0, -1)};
  const Sim3 s{2.0, so3_exp(Vec3(0.2, 0, 0)), Vec3(5, 0, 0)};
  const TrackerState out = transform_state(st, s);
  EXPECT_LT((out.pose.center() - s * Vec3(1, 2, 3)).norm(), 1e-12);
  EXPECT_LT((out.motion->translation - Vec3(0, 0, -2)).norm(), 1e-12);
  EXPECT_EQ(out.motion->rotation, st.motion->rotation);
}
