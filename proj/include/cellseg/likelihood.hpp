#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cellseg/common.hpp"
#include "cellseg/image.hpp"

namespace cellseg {

struct CentroidPoint {
  double x = 0.0;
  double y = 0.0;
};

// Weak labels: one point per cell, real-valued pixel coordinates.
struct CentroidAnnotation {
  std::string image_id;
  std::vector<CentroidPoint> points;
};

namespace detail {

inline void check_in_bounds(const CentroidPoint& p, int width, int height,
                            const std::string& context) {
  if (!(p.x >= 0.0 && p.x <= width - 1.0 && p.y >= 0.0 && p.y <= height - 1.0))
    throw InvalidInput(context + ": point (" + std::to_string(p.x) + "," +
                       std::to_string(p.y) + ") outside image bounds " +
                       std::to_string(width) + "x" + std::to_string(height));
}

}  // namespace detail

// Training target: per cell a Gaussian kernel exp(-d^2 / (2 sigma^2)),
// rescaled so the centroid's nearest pixel reads exactly 1, truncated at 4
// sigma, and combined across cells by per-pixel maximum. Values stay in [0,1]
// and touching cells keep distinct peaks.
inline LikelihoodMap render_likelihood(const CentroidAnnotation& ann, int width,
                                       int height, double sigma) {
  if (sigma <= 0.0) throw InvalidInput("render_likelihood: sigma must be > 0");
  if (width <= 0 || height <= 0)
    throw InvalidInput("render_likelihood: empty image extent");
  LikelihoodMap map = LikelihoodMap::Zero(height, width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  for (const auto& p : ann.points) {
    detail::check_in_bounds(p, width, height, "render_likelihood");
    const Eigen::Index nx = static_cast<Eigen::Index>(std::lround(p.x));
    const Eigen::Index ny = static_cast<Eigen::Index>(std::lround(p.y));
    const double dx0 = nx - p.x, dy0 = ny - p.y;
    const double peak_d2 = dx0 * dx0 + dy0 * dy0;
    const Eigen::Index y0 = std::max<Eigen::Index>(0, ny - radius);
    const Eigen::Index y1 = std::min<Eigen::Index>(height - 1, ny + radius);
    const Eigen::Index x0 = std::max<Eigen::Index>(0, nx - radius);
    const Eigen::Index x1 = std::min<Eigen::Index>(width - 1, nx + radius);
    for (Eigen::Index y = y0; y <= y1; ++y) {
      for (Eigen::Index x = x0; x <= x1; ++x) {
        const double dx = x - p.x, dy = y - p.y;
        const double d2 = dx * dx + dy * dy;
        if (d2 > 16.0 * sigma * sigma) continue;
        const double v = std::exp(-(d2 - peak_d2) * inv);
        if (v > map(y, x)) map(y, x) = v;
      }
    }
  }
  return map;
}

// Annotation CSV: one "x,y" pair per line, decimal reals, one optional
// leading header line "x,y". Order is preserved.
inline CentroidAnnotation load_annotations(std::istream& is,
                                           const std::string& source, int width,
                                           int height,
                                           std::string image_id = {}) {
  CentroidAnnotation ann;
  ann.image_id = std::move(image_id);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (line_no == 1 && t == "x,y") continue;
    const auto comma = t.find(',');
    auto fail = [&] {
      throw InvalidInput(source + ": malformed annotation row at line " +
                         std::to_string(line_no) + ": \"" + t + "\"");
    };
    if (comma == std::string::npos) fail();
    char* end = nullptr;
    const std::string xs = trim(t.substr(0, comma));
    const std::string ys = trim(t.substr(comma + 1));
    if (xs.empty() || ys.empty()) fail();
    const double x = std::strtod(xs.c_str(), &end);
    if (end != xs.c_str() + xs.size()) fail();
    const double y = std::strtod(ys.c_str(), &end);
    if (end != ys.c_str() + ys.size()) fail();
    CentroidPoint p{x, y};
    detail::check_in_bounds(p, width, height,
                            source + " line " + std::to_string(line_no));
    ann.points.push_back(p);
  }
  return ann;
}

inline CentroidAnnotation load_annotations(const std::string& path, int width,
                                           int height,
                                           std::string image_id = {}) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("cannot open annotation file " + path);
  return load_annotations(is, path, width, height, std::move(image_id));
}

inline void save_annotations(const std::string& path,
                             const CentroidAnnotation& ann) {
  std::ofstream os(path);
  if (!os) throw InvalidInput("cannot open " + path + " for writing");
  os << "x,y\n";
  os.precision(17);
  for (const auto& p : ann.points) os << p.x << "," << p.y << "\n";
  if (!os) throw InvalidInput("failed while writing " + path);
}

}  // namespace cellseg
