#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "cellseg/common.hpp"
#include "cellseg/image.hpp"
#include "cellseg/likelihood.hpp"

namespace cellseg {

// One detected cell center: an 8-connected component of the thresholded
// likelihood map.
struct CenterRegion {
  int id = 0;  // 1-based, assigned in scan order
  std::vector<std::pair<int, int>> pixels;  // (y, x), scan order
  double peak = 0.0;
  double cx = 0.0;
  double cy = 0.0;
};

// Components of {i : y_i > threshold} by 8-connectivity, ids in scan order.
// Components smaller than `min_area` pixels are dropped as noise and the
// surviving regions renumbered 1..N.
inline std::vector<CenterRegion> detect_centers(const LikelihoodMap& y,
                                                double threshold,
                                                int min_area = 2) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidInput("detect_centers: threshold must lie in (0, 1), got " +
                       std::to_string(threshold));
  const Eigen::Index H = y.rows(), W = y.cols();
  Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> visited =
      Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Zero(H, W);
  std::vector<CenterRegion> regions;
  std::vector<std::pair<int, int>> stack;
  for (Eigen::Index sy = 0; sy < H; ++sy) {
    for (Eigen::Index sx = 0; sx < W; ++sx) {
      if (visited(sy, sx) || !(y(sy, sx) > threshold)) continue;
      CenterRegion region;
      stack.clear();
      stack.emplace_back(static_cast<int>(sy), static_cast<int>(sx));
      visited(sy, sx) = 1;
      while (!stack.empty()) {
        auto [py, px] = stack.back();
        stack.pop_back();
        region.pixels.emplace_back(py, px);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (!dy && !dx) continue;
            const Eigen::Index ny = py + dy, nx = px + dx;
            if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
            if (visited(ny, nx) || !(y(ny, nx) > threshold)) continue;
            visited(ny, nx) = 1;
            stack.emplace_back(static_cast<int>(ny), static_cast<int>(nx));
          }
        }
      }
      if (static_cast<int>(region.pixels.size()) < min_area) continue;
      std::sort(region.pixels.begin(), region.pixels.end());
      double sx_sum = 0.0, sy_sum = 0.0;
      for (auto [py, px] : region.pixels) {
        region.peak = std::max(region.peak, y(py, px));
        sy_sum += py;
        sx_sum += px;
      }
      region.cx = sx_sum / static_cast<double>(region.pixels.size());
      region.cy = sy_sum / static_cast<double>(region.pixels.size());
      regions.push_back(std::move(region));
    }
  }
  for (std::size_t i = 0; i < regions.size(); ++i)
    regions[i].id = static_cast<int>(i) + 1;
  return regions;
}

struct MatchCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  // matched (prediction index, truth index) pairs
  std::vector<std::pair<int, int>> pairs;
};

// One-to-one greedy matching in increasing distance order; a pair is eligible
// iff its centroid distance is at most `radius`. Deterministic: ties break on
// prediction index, then truth index.
inline MatchCounts match_detections(const std::vector<CenterRegion>& pred,
                                    const CentroidAnnotation& truth,
                                    double radius) {
  if (!(radius > 0.0)) throw InvalidInput("match_detections: radius must be > 0");
  struct Candidate {
    double d;
    int p, t;
  };
  std::vector<Candidate> candidates;
  for (int p = 0; p < static_cast<int>(pred.size()); ++p) {
    for (int t = 0; t < static_cast<int>(truth.points.size()); ++t) {
      const double dx = pred[static_cast<std::size_t>(p)].cx -
                        truth.points[static_cast<std::size_t>(t)].x;
      const double dy = pred[static_cast<std::size_t>(p)].cy -
                        truth.points[static_cast<std::size_t>(t)].y;
      const double d = std::hypot(dx, dy);
      if (d <= radius) candidates.push_back({d, p, t});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    return std::tie(a.d, a.p, a.t) < std::tie(b.d, b.p, b.t);
  });
  std::vector<char> pred_used(pred.size(), 0), truth_used(truth.points.size(), 0);
  MatchCounts counts;
  for (const auto& c : candidates) {
    if (pred_used[static_cast<std::size_t>(c.p)] ||
        truth_used[static_cast<std::size_t>(c.t)])
      continue;
    pred_used[static_cast<std::size_t>(c.p)] = 1;
    truth_used[static_cast<std::size_t>(c.t)] = 1;
    counts.pairs.emplace_back(c.p, c.t);
    ++counts.tp;
  }
  counts.fp = static_cast<int>(pred.size()) - counts.tp;
  counts.fn = static_cast<int>(truth.points.size()) - counts.tp;
  return counts;
}

}  // namespace cellseg
