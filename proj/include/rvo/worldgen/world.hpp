#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <unordered_map>
#include <vector>

#include "rvo/frame.hpp"
#include "rvo/geometry/types.hpp"
#include "rvo/rng.hpp"
#include "rvo/worldgen/scenario.hpp"

namespace rvo {

struct Landmark {
  LandmarkId id = 0;
  Point3 position = Point3::Zero();
  Descriptor descriptor;
};

struct TimedPose {
  double timestamp = 0.0;
  Pose pose;  // world to camera
};

/// Immutable ground truth for one scenario.
struct World {
  Scenario scenario;
  std::vector<Landmark> landmarks;
  std::vector<TimedPose> trajectory;
  CameraIntrinsics intrinsics;
  double fps = 10.0;
  double sampled_volume = 0.0;  // m^3 of the box the landmark count was drawn for

  int frame_count() const { return static_cast<int>(trajectory.size()); }
};

namespace detail {

struct PathSample {
  Vec3 center;
  double yaw;  // heading about +y; yaw 0 faces +z
};

inline Mat3 yaw_rotation(double yaw) {
  Mat3 r;
  const double c = std::cos(yaw), s = std::sin(yaw);
  r << c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c;
  return r;
}

inline std::vector<PathSample> straight_path(int n, double step) {
  std::vector<PathSample> out(n);
  for (int i = 0; i < n; ++i) out[i] = {Vec3(0.0, 0.0, i * step), 0.0};
  return out;
}

inline std::vector<PathSample> loop_path(int n, double step) {
  const double length = (n - 1) * step;
  const double radius = std::max(length / (2.0 * M_PI), 1e-6);
  std::vector<PathSample> out(n);
  for (int i = 0; i < n; ++i) {
    const double theta = 2.0 * M_PI * static_cast<double>(i) / (n - 1);
    out[i] = {Vec3(radius - radius * std::cos(theta), 0.0, radius * std::sin(theta)), theta};
  }
  out.back() = out.front();
  return out;
}

/// Lemniscate of Gerono, resampled at uniform arc length.
inline std::vector<PathSample> figure_eight_path(int n, double step) {
  constexpr int kTable = 20000;
  std::vector<double> arc(kTable + 1, 0.0);
  auto pos = [](double t) { return Vec3(std::sin(t), 0.0, std::sin(t) * std::cos(t)); };
  for (int k = 1; k <= kTable; ++k)
    arc[k] = arc[k - 1] + (pos(2.0 * M_PI * k / kTable) - pos(2.0 * M_PI * (k - 1) / kTable)).norm();
  const double amplitude = (n - 1) * step / arc.back();
  std::vector<PathSample> out(n);
  for (int i = 0; i < n; ++i) {
    const double target = arc.back() * static_cast<double>(i) / (n - 1);
    const auto it = std::lower_bound(arc.begin(), arc.end(), target);
    const int k = std::clamp(static_cast<int>(it - arc.begin()), 1, kTable);
    const double frac = (target - arc[k - 1]) / std::max(arc[k] - arc[k - 1], 1e-300);
    const double t = 2.0 * M_PI * (k - 1 + std::clamp(frac, 0.0, 1.0)) / kTable;
    const double dx = std::cos(t), dz = std::cos(2.0 * t);
    out[i] = {amplitude * pos(t), std::atan2(dx, dz)};
  }
  out.back() = out.front();
  return out;
}

/// Straight stretches joined by brisk turns with a raised-cosine yaw rate.
inline std::vector<PathSample> kitti_like_path(int n, double step, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "kitti_path"));
  struct Turn {
    double start, length, angle;
  };
  std::vector<Turn> turns;
  const double total = (n - 1) * step;
  double s = rng.uniform(40.0, 100.0);
  while (s < total) {
    const double length = rng.uniform(25.0, 40.0);
    const double angle = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(60.0, 100.0) * M_PI / 180.0;
    turns.push_back({s, length, angle});
    s += length + rng.uniform(40.0, 100.0);
  }
  auto yaw_at = [&](double arc) {
    double yaw = 0.0;
    for (const auto& t : turns) {
      if (arc <= t.start) break;
      const double u = std::min((arc - t.start) / t.length, 1.0);
      yaw += t.angle * (u - std::sin(2.0 * M_PI * u) / (2.0 * M_PI));
    }
    return yaw;
  };
  std::vector<PathSample> out(n);
  Vec3 c = Vec3::Zero();
  constexpr int kSub = 16;
  for (int i = 0; i < n; ++i) {
    if (i > 0) {
      for (int k = 0; k < kSub; ++k) {
        const double mid = ((i - 1) + (k + 0.5) / kSub) * step;
        const double yaw = yaw_at(mid);
        c += Vec3(std::sin(yaw), 0.0, std::cos(yaw)) * (step / kSub);
      }
    }
    out[i] = {c, yaw_at(i * step)};
  }
  return out;
}

inline double segment_distance_xz(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec2 pp(p.x(), p.z()), aa(a.x(), a.z()), bb(b.x(), b.z());
  const Vec2 ab = bb - aa;
  const double l2 = ab.squaredNorm();
  const double t = l2 > 0.0 ? std::clamp((pp - aa).dot(ab) / l2, 0.0, 1.0) : 0.0;
  return (pp - (aa + t * ab)).norm();
}

inline Descriptor random_descriptor(Rng& rng) {
  Descriptor d;
  for (auto& w : d.words) w = rng();
  return d;
}

}  // namespace detail

/// Builds the landmark field and camera trajectory for a scenario. The same
/// scenario (including seed) always yields the same world. Closed trajectory
/// kinds end exactly at their start pose.
inline World generate_world(const Scenario& scenario) {
  validate(scenario);
  World w;
  w.scenario = scenario;
  w.intrinsics = scenario.intrinsics;
  w.fps = scenario.fps;

  const int n = scenario.frames;
  const double step = scenario.speed / scenario.fps;
  std::vector<detail::PathSample> path;
  switch (scenario.trajectory) {
    case TrajectoryKind::straight: path = detail::straight_path(n, step); break;
    case TrajectoryKind::loop: path = detail::loop_path(n, step); break;
    case TrajectoryKind::figure_eight: path = detail::figure_eight_path(n, step); break;
    case TrajectoryKind::kitti_like: path = detail::kitti_like_path(n, step, scenario.seed); break;
  }
  w.trajectory.resize(n);
  for (int i = 0; i < n; ++i) {
    const Mat3 world_from_camera = detail::yaw_rotation(path[i].yaw);
    w.trajectory[i] = {i / scenario.fps, Pose::from_center(world_from_camera.transpose(), path[i].center)};
  }

  // Landmarks: Poisson count over the padded bounding box, minus the corridor.
  Vec3 lo = path.front().center, hi = lo;
  for (const auto& p : path) {
    lo = lo.cwiseMin(p.center);
    hi = hi.cwiseMax(p.center);
  }
  const double m = scenario.lateral_margin;
  lo = Vec3(lo.x() - m, scenario.landmark_min_height, lo.z() - m);
  hi = Vec3(hi.x() + m, scenario.landmark_max_height, hi.z() + m);
  w.sampled_volume = (hi - lo).prod();

  Rng rng(derive_seed(scenario.seed, "landmarks"));
  std::poisson_distribution<long long> count_dist(scenario.landmark_density * w.sampled_volume);
  const long long count = scenario.landmark_density > 0.0 ? count_dist(rng) : 0;

  // Bucket path segments on a coarse xz grid for the corridor test.
  const double cell = std::max(10.0, 2.0 * scenario.road_half_width);
  auto key = [&](double x, double z) {
    return (static_cast<std::int64_t>(std::floor(x / cell)) << 32) ^
           static_cast<std::int64_t>(static_cast<std::uint32_t>(static_cast<std::int32_t>(std::floor(z / cell))));
  };
  std::unordered_map<std::int64_t, std::vector<int>> buckets;
  for (int i = 0; i + 1 < n; ++i) {
    const Vec3& a = path[i].center;
    const Vec3& b = path[i + 1].center;
    const double r = scenario.road_half_width;
    for (double x = std::floor((std::min(a.x(), b.x()) - r) / cell) * cell; x <= std::max(a.x(), b.x()) + r; x += cell)
      for (double z = std::floor((std::min(a.z(), b.z()) - r) / cell) * cell; z <= std::max(a.z(), b.z()) + r;
           z += cell)
        buckets[key(x + 0.5 * cell, z + 0.5 * cell)].push_back(i);
  }

  w.landmarks.reserve(static_cast<std::size_t>(count));
  for (long long k = 0; k < count; ++k) {
    const Point3 p(rng.uniform(lo.x(), hi.x()), rng.uniform(lo.y(), hi.y()), rng.uniform(lo.z(), hi.z()));
    const Descriptor d = detail::random_descriptor(rng);
    bool in_corridor = false;
    if (scenario.road_half_width > 0.0) {
      if (const auto it = buckets.find(key(p.x(), p.z())); it != buckets.end()) {
        for (int i : it->second) {
          if (detail::segment_distance_xz(p, path[i].center, path[i + 1].center) < scenario.road_half_width) {
            in_corridor = true;
            break;
          }
        }
      }
    }
    if (in_corridor) continue;
    w.landmarks.push_back({static_cast<LandmarkId>(w.landmarks.size()), p, d});
  }
  return w;
}

/// Product of the magnitudes of active events of `kind` (1 when none).
inline double event_multiplier(const Scenario& s, int frame, EventKind kind) {
  double m = 1.0;
  for (const auto& e : s.events)
    if (e.kind == kind && e.active(frame)) m *= e.magnitude;
  return m;
}

/// Rotation a pose_jitter event injects into the tracker at `frame`, if any.
inline std::optional<Mat3> pose_jitter_at(const World& world, int frame) {
  double degrees = 0.0;
  bool any = false;
  for (const auto& e : world.scenario.events) {
    if (e.kind == EventKind::pose_jitter && e.active(frame)) {
      degrees += e.magnitude;
      any = true;
    }
  }
  if (!any) return std::nullopt;
  Rng rng(derive_seed(world.scenario.seed, "jitter", static_cast<std::uint64_t>(frame)));
  Vec3 axis;
  do {
    axis = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  } while (axis.norm() < 1e-3 || axis.norm() > 1.0);
  return so3_exp(axis.normalized() * degrees * M_PI / 180.0);
}

/// Observations of `frame_index`: projections of landmarks in front of the
/// camera and inside the image, with Gaussian pixel noise, uniform outliers,
/// per-bit descriptor corruption and the active texture/noise events.
/// Pure in (world, frame_index); the order of observations is shuffled.
inline Frame observe(const World& world, int frame_index) {
  const Scenario& s = world.scenario;
  Frame f;
  f.index = frame_index;
  f.timestamp = world.trajectory.at(static_cast<std::size_t>(frame_index)).timestamp;
  const Pose& pose = world.trajectory[static_cast<std::size_t>(frame_index)].pose;
  const CameraIntrinsics& k = world.intrinsics;

  const double keep = std::min(1.0, event_multiplier(s, frame_index, EventKind::texture_dropout));
  const double sigma = s.pixel_noise * event_multiplier(s, frame_index, EventKind::noise_burst);
  if (keep <= 0.0) return f;

  Rng rng(derive_seed(s.seed, "frame", static_cast<std::uint64_t>(frame_index)));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::binomial_distribution<int> flips(Descriptor::kBits, s.descriptor_flip_rate);
  const double r2 = s.max_range * s.max_range;

  for (const Landmark& lm : world.landmarks) {
    const Vec3 pc = pose * lm.position;
    if (pc.z() < s.min_depth || pc.squaredNorm() > r2) continue;
    const Vec2 px = k.project(pc);
    if (!k.contains(px)) continue;
    if (keep < 1.0 && rng.uniform() >= keep) continue;

    Observation o;
    o.landmark_id = lm.id;
    if (s.outlier_rate > 0.0 && rng.uniform() < s.outlier_rate) {
      o.pixel = Vec2(rng.uniform(0.0, k.width), rng.uniform(0.0, k.height));
    } else if (sigma > 0.0) {
      const double nx = noise(rng), ny = noise(rng);
      o.pixel = px + sigma * Vec2(nx, ny);
    } else {
      o.pixel = px;
    }
    o.descriptor = lm.descriptor;
    if (s.descriptor_flip_rate > 0.0) {
      const int nflip = flips(rng);
      for (int b = 0; b < nflip; ++b) {
        // Distinct positions by rejection; nflip is small relative to 256.
        int bit = 0;
        do {
          bit = static_cast<int>(rng.below(Descriptor::kBits));
        } while (o.descriptor.bit(bit) != lm.descriptor.bit(bit));
        o.descriptor.flip(bit);
      }
    }
    if (!k.contains(o.pixel)) continue;
    f.observations.push_back(o);
  }
  std::shuffle(f.observations.begin(), f.observations.end(), rng);
  return f;
}

}  // namespace rvo
