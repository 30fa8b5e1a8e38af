#pragma once

#include <Eigen/Dense>
#include <cstdint>

namespace cellseg {

// 2D image planes are row-major Eigen arrays indexed (y, x).
template <typename Scalar>
using ImageT =
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageT<double>;

// Cell-position likelihood plane: values in [0, 1], peak 1 at detections.
using LikelihoodMap = Image;

// 0 = background, u >= 1 = cell identity.
using LabelImage =
    Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Binary per-cell mask, 0 or 1.
using Mask =
    Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Image clamp01(const Image& img) {
  return img.max(0.0).min(1.0);
}

inline bool in_bounds(const Image& img, Eigen::Index y, Eigen::Index x) {
  return y >= 0 && y < img.rows() && x >= 0 && x < img.cols();
}

inline int max_label(const LabelImage& labels) {
  return labels.size() == 0 ? 0 : static_cast<int>(labels.maxCoeff());
}

}  // namespace cellseg
