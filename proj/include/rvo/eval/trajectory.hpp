#pragma once

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rvo/error.hpp"
#include "rvo/geometry/horn.hpp"
#include "rvo/geometry/types.hpp"
#include "rvo/stats.hpp"
#include "rvo/worldgen/world.hpp"
#include "rvo/worldmap/map.hpp"

namespace rvo {

/// Camera pose in the world: `rotation` maps camera axes to world axes and
/// `position` is the camera center.
struct StampedPose {
  double timestamp = 0.0;
  Mat3 rotation = Mat3::Identity();
  Vec3 position = Vec3::Zero();
};

struct Trajectory {
  std::vector<StampedPose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }

  void validate() const {
    for (std::size_t i = 1; i < poses.size(); ++i)
      if (!(poses[i].timestamp > poses[i - 1].timestamp))
        throw Error(ErrorCode::InvalidArgument, "trajectory timestamps must be strictly increasing (entry " +
                                                    std::to_string(i) + ")");
  }
};

inline StampedPose stamped(double timestamp, const Pose& world_to_camera) {
  return {timestamp, world_to_camera.rotation.transpose(), world_to_camera.center()};
}

inline Trajectory ground_truth_trajectory(const World& world) {
  Trajectory t;
  for (const auto& p : world.trajectory) t.poses.push_back(stamped(p.timestamp, p.pose));
  return t;
}

/// Keyframe poses ordered by time. Where several keyframes share a
/// timestamp (after fusion both maps may hold one), the lowest id is kept.
inline Trajectory keyframe_trajectory(const WorldMap& map) {
  std::vector<const KeyFrame*> kfs;
  for (const auto& [id, kf] : map.keyframes()) kfs.push_back(&kf);
  std::stable_sort(kfs.begin(), kfs.end(),
                   [](const KeyFrame* a, const KeyFrame* b) { return a->timestamp < b->timestamp; });
  Trajectory t;
  for (const KeyFrame* k : kfs) {
    if (!t.poses.empty() && !(k->timestamp > t.poses.back().timestamp)) continue;
    t.poses.push_back(stamped(k->timestamp, k->pose));
  }
  return t;
}

enum class TrajectoryFormat { kitti, tum };

inline TrajectoryFormat parse_trajectory_format(const std::string& s) {
  if (s == "kitti") return TrajectoryFormat::kitti;
  if (s == "tum") return TrajectoryFormat::tum;
  throw Error(ErrorCode::InvalidArgument, "unknown trajectory format '" + s + "'");
}

inline void write_trajectory(const Trajectory& t, std::ostream& out, TrajectoryFormat format) {
  out << std::setprecision(17);
  auto put = [&](double v, char sep) { out << v + 0.0 << sep; };  // + 0.0 drops negative zero
  for (const auto& p : t.poses) {
    if (format == TrajectoryFormat::kitti) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) put(p.rotation(r, c), ' ');
        put(p.position[r], r == 2 ? '\n' : ' ');
      }
    } else {
      const Eigen::Quaterniond q(p.rotation);
      put(p.timestamp, ' ');
      for (int i = 0; i < 3; ++i) put(p.position[i], ' ');
      put(q.x(), ' ');
      put(q.y(), ' ');
      put(q.z(), ' ');
      put(q.w(), '\n');
    }
  }
}

inline void write_trajectory(const Trajectory& t, const std::string& path, TrajectoryFormat format) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path);
  write_trajectory(t, out, format);
}

/// Reads KITTI (12 values per line, row-major [R|t]; timestamps are line
/// index times `frame_period`) or TUM ("t x y z qx qy qz qw"; quaternions
/// are normalized). Blank lines and lines starting with '#' are skipped.
/// KITTI rotations that drift from orthonormal by less than 1e-3 are
/// repaired and reported in `warnings`; larger drift is rejected.
inline Trajectory read_trajectory(std::istream& in, TrajectoryFormat format, double frame_period = 0.1,
                                  std::vector<std::string>* warnings = nullptr) {
  Trajectory t;
  std::string line;
  int line_no = 0, pose_index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    std::vector<double> v;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": not a number '" + tok + "'");
      }
    }
    const std::size_t want = format == TrajectoryFormat::kitti ? 12 : 8;
    if (v.size() != want)
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected " + std::to_string(want) +
                                             " values, found " + std::to_string(v.size()));
    for (double x : v)
      if (!std::isfinite(x)) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": non-finite value");

    StampedPose p;
    if (format == TrajectoryFormat::kitti) {
      p.timestamp = pose_index * frame_period;
      p.rotation << v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10];
      p.position = Vec3(v[3], v[7], v[11]);
      const double drift = (p.rotation.transpose() * p.rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
      if (drift > 1e-9 || p.rotation.determinant() < 0.0) {
        if (drift >= 1e-3 || p.rotation.determinant() < 0.0)
          throw Error(ErrorCode::NonOrthonormalRotation, "line " + std::to_string(line_no) + ": rotation drift " +
                                                             std::to_string(drift));
        p.rotation = orthonormalize(p.rotation);
        if (warnings) warnings->push_back("line " + std::to_string(line_no) + ": rotation re-orthonormalized");
      }
    } else {
      p.timestamp = v[0];
      p.position = Vec3(v[1], v[2], v[3]);
      Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
      if (q.norm() < 1e-12) throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": zero quaternion");
      q.normalize();
      p.rotation = q.toRotationMatrix();
    }
    if (!t.poses.empty() && !(p.timestamp > t.poses.back().timestamp))
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": timestamp not increasing");
    t.poses.push_back(p);
    ++pose_index;
  }
  return t;
}

inline Trajectory read_trajectory(const std::string& path, TrajectoryFormat format, double frame_period = 0.1,
                                  std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open " + path);
  return read_trajectory(in, format, frame_period, warnings);
}

/// Index pairs (estimate, reference) whose timestamps are nearest neighbours
/// within `max_dt`. A negative `max_dt` uses half the median reference spacing.
inline std::vector<std::pair<std::size_t, std::size_t>> associate(const Trajectory& est, const Trajectory& ref,
                                                                  double max_dt = -1.0) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (ref.empty()) return out;
  if (max_dt < 0.0) {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < ref.size(); ++i) gaps.push_back(ref.poses[i].timestamp - ref.poses[i - 1].timestamp);
    max_dt = gaps.empty() ? 1e-9 : 0.5 * median(gaps);
  }
  std::size_t j = 0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est.poses[i].timestamp;
    while (j + 1 < ref.size() && std::abs(ref.poses[j + 1].timestamp - t) <= std::abs(ref.poses[j].timestamp - t)) ++j;
    if (std::abs(ref.poses[j].timestamp - t) <= max_dt) out.push_back({i, j});
  }
  return out;
}

struct AteResult {
  double rmse = 0.0;
  double max_error = 0.0;
  Sim3 alignment;  // estimate -> reference
  std::size_t pairs = 0;
};

/// Absolute trajectory error after Sim3 alignment of positions.
inline AteResult evaluate_ate(const Trajectory& est, const Trajectory& ref, double max_dt = -1.0) {
  const auto pairs = associate(est, ref, max_dt);
  if (pairs.size() < 3)
    throw Error(ErrorCode::InsufficientOverlap, std::to_string(pairs.size()) + " associated poses, need 3");
  std::vector<PointPair> pp;
  for (const auto& [i, j] : pairs) pp.push_back({est.poses[i].position, ref.poses[j].position});
  AteResult r;
  r.alignment = horn_align(pp);
  double sq = 0.0;
  for (const auto& p : pp) {
    const double e = (r.alignment * p.source - p.target).norm();
    sq += e * e;
    r.max_error = std::max(r.max_error, e);
  }
  r.pairs = pp.size();
  r.rmse = std::sqrt(sq / static_cast<double>(pp.size()));
  return r;
}

inline double ate_rmse(const Trajectory& est, const Trajectory& ref, double max_dt = -1.0) {
  return evaluate_ate(est, ref, max_dt).rmse;
}

inline Trajectory transformed(const Trajectory& t, const Sim3& s) {
  Trajectory out = t;
  for (auto& p : out.poses) {
    p.position = s * p.position;
    p.rotation = s.rotation * p.rotation;
  }
  return out;
}

/// Distance between the first and last positions. For a sequence that
/// returns to its start this is the accumulated drift.
inline double endpoint_error(const Trajectory& aligned) {
  if (aligned.empty()) throw Error(ErrorCode::InvalidArgument, "empty trajectory");
  return (aligned.poses.back().position - aligned.poses.front().position).norm();
}

/// Endpoint error against a reference that need not be closed: the
/// displacement between the first and last estimate poses compared with the
/// reference displacement over the same timestamps.
inline double endpoint_error(const Trajectory& aligned, const Trajectory& ref, double max_dt = -1.0) {
  const auto pairs = associate(aligned, ref, max_dt);
  if (pairs.empty()) throw Error(ErrorCode::InsufficientOverlap, "no associated poses");
  const auto [i0, j0] = pairs.front();
  const auto [i1, j1] = pairs.back();
  const Vec3 d_est = aligned.poses[i1].position - aligned.poses[i0].position;
  const Vec3 d_ref = ref.poses[j1].position - ref.poses[j0].position;
  return (d_est - d_ref).norm();
}

}  // namespace rvo
