#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <span>
#include <vector>

#include "rvo/geometry/types.hpp"

namespace rvo {

struct DescriptorMatch {
  std::size_t a = 0;  // index into the first set
  std::size_t b = 0;  // index into the second set
  int distance = 0;
};

/// Buckets pixel positions on a regular grid for radius queries.
class FeatureGrid {
 public:
  FeatureGrid(std::span<const Vec2> pixels, const CameraIntrinsics& k, double cell = 20.0)
      : cell_(cell),
        cols_(std::max(1, static_cast<int>(std::ceil(k.width / cell)))),
        rows_(std::max(1, static_cast<int>(std::ceil(k.height / cell)))),
        cells_(static_cast<std::size_t>(cols_ * rows_)),
        pixels_(pixels.begin(), pixels.end()) {
    for (std::size_t i = 0; i < pixels_.size(); ++i) {
      const int c = std::clamp(static_cast<int>(pixels_[i].x() / cell_), 0, cols_ - 1);
      const int r = std::clamp(static_cast<int>(pixels_[i].y() / cell_), 0, rows_ - 1);
      cells_[static_cast<std::size_t>(r * cols_ + c)].push_back(i);
    }
  }

  template <class F>
  void for_each_within(const Vec2& center, double radius, F&& visit) const {
    const int c0 = std::max(0, static_cast<int>(std::floor((center.x() - radius) / cell_)));
    const int c1 = std::min(cols_ - 1, static_cast<int>(std::floor((center.x() + radius) / cell_)));
    const int r0 = std::max(0, static_cast<int>(std::floor((center.y() - radius) / cell_)));
    const int r1 = std::min(rows_ - 1, static_cast<int>(std::floor((center.y() + radius) / cell_)));
    const double r2 = radius * radius;
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        for (std::size_t i : cells_[static_cast<std::size_t>(r * cols_ + c)])
          if ((pixels_[i] - center).squaredNorm() <= r2) visit(i);
  }

 private:
  double cell_;
  int cols_, rows_;
  std::vector<std::vector<std::size_t>> cells_;
  std::vector<Vec2> pixels_;
};

/// Candidate pairs (a, b, distance) reduced to those that are each other's
/// best under the threshold. Ties keep the lower index, so the result does
/// not depend on which side is called first.
inline std::vector<DescriptorMatch> mutual_best(std::span<const DescriptorMatch> candidates, std::size_t na,
                                                std::size_t nb, int max_distance) {
  std::vector<std::pair<int, std::size_t>> best_a(na, {INT_MAX, SIZE_MAX}), best_b(nb, {INT_MAX, SIZE_MAX});
  for (const auto& m : candidates) {
    if (m.distance > max_distance) continue;
    best_a[m.a] = std::min(best_a[m.a], std::pair{m.distance, m.b});
    best_b[m.b] = std::min(best_b[m.b], std::pair{m.distance, m.a});
  }
  std::vector<DescriptorMatch> out;
  for (std::size_t a = 0; a < na; ++a) {
    const auto [d, b] = best_a[a];
    if (b != SIZE_MAX && best_b[b].second == a) out.push_back({a, b, d});
  }
  return out;
}

/// All-pairs matching with the mutual-best rule.
inline std::vector<DescriptorMatch> match_exhaustive(std::span<const Descriptor> a, std::span<const Descriptor> b,
                                                     int max_distance) {
  std::vector<DescriptorMatch> cand;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) {
      const int d = hamming(a[i], b[j]);
      if (d <= max_distance) cand.push_back({i, j, d});
    }
  return mutual_best(cand, a.size(), b.size(), max_distance);
}

/// Exhaustive matching with a ratio test applied from both sides: the best
/// distance must beat `ratio` times the runner-up for the row and for the
/// column. The acceptance rule is symmetric in (a, b).
inline std::vector<DescriptorMatch> match_exhaustive_ratio(std::span<const Descriptor> a,
                                                           std::span<const Descriptor> b, int max_distance,
                                                           double ratio) {
  const std::size_t na = a.size(), nb = b.size();
  std::vector<int> best_a(na, INT_MAX), second_a(na, INT_MAX), best_b(nb, INT_MAX), second_b(nb, INT_MAX);
  std::vector<std::size_t> arg_a(na, SIZE_MAX), arg_b(nb, SIZE_MAX);
  auto push = [](int d, std::size_t idx, int& best, int& second, std::size_t& arg) {
    if (d < best || (d == best && idx < arg)) {
      second = best;
      best = d;
      arg = idx;
    } else if (d < second) {
      second = d;
    }
  };
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const int d = hamming(a[i], b[j]);
      push(d, j, best_a[i], second_a[i], arg_a[i]);
      push(d, i, best_b[j], second_b[j], arg_b[j]);
    }
  std::vector<DescriptorMatch> out;
  for (std::size_t i = 0; i < na; ++i) {
    const std::size_t j = arg_a[i];
    if (j == SIZE_MAX || arg_b[j] != i) continue;
    const int d = best_a[i];
    if (d > max_distance) continue;
    if (second_a[i] != INT_MAX && d >= ratio * second_a[i]) continue;
    if (second_b[j] != INT_MAX && d >= ratio * second_b[j]) continue;
    out.push_back({i, j, d});
  }
  return out;
}

}  // namespace rvo
