#pragma once

#include <Eigen/Dense>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cellseg/common.hpp"
#include "cellseg/image.hpp"

namespace cellseg {

// Dense n-dimensional array over a flat row-major (C-order) buffer. Feature
// maps use shape {channels, height, width}. Eigen maps expose the buffer to
// expression code without copies.
template <typename Scalar>
class Tensor {
 public:
  using Shape = std::vector<Eigen::Index>;
  using Flat = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using MatrixView = Eigen::Map<
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixView = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic,
                                                         Eigen::Dynamic,
                                                         Eigen::RowMajor>>;
  using PlaneView = Eigen::Map<ImageT<Scalar>>;
  using ConstPlaneView = Eigen::Map<const ImageT<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(Flat::Zero(count(shape_))) {}

  Tensor(Shape shape, Flat data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_))
      throw InvalidInput("tensor: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  static Tensor from_image(const ImageT<Scalar>& img) {
    Tensor t({1, img.rows(), img.cols()});
    Eigen::Map<ImageT<Scalar>>(t.data(), img.rows(), img.cols()) = img;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Eigen::Index dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Eigen::Map<Flat> flat() { return {data_.data(), data_.size()}; }
  Eigen::Map<const Flat> flat() const { return {data_.data(), data_.size()}; }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  // Rank-3 {C, H, W} element access.
  Scalar& operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) {
    return data_[(c * dim(1) + y) * dim(2) + x];
  }
  Scalar operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) const {
    return data_[(c * dim(1) + y) * dim(2) + x];
  }

  // H x W view of one channel of a rank-3 tensor.
  PlaneView channel(Eigen::Index c) {
    return PlaneView(data_.data() + c * dim(1) * dim(2), dim(1), dim(2));
  }
  ConstPlaneView channel(Eigen::Index c) const {
    return ConstPlaneView(data_.data() + c * dim(1) * dim(2), dim(1), dim(2));
  }

  // Reinterprets the flat buffer as a rows x cols row-major matrix.
  MatrixView as_matrix(Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != size())
      throw InvalidInput("tensor: cannot view " + shape_string(shape_) + " as " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    return MatrixView(data_.data(), rows, cols);
  }
  ConstMatrixView as_matrix(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != size())
      throw InvalidInput("tensor: cannot view " + shape_string(shape_) + " as " +
                         std::to_string(rows) + "x" + std::to_string(cols));
    return ConstMatrixView(data_.data(), rows, cols);
  }

  ImageT<Scalar> to_image() const {
    if (rank() == 2) return ConstPlaneView(data_.data(), dim(0), dim(1));
    if (rank() == 3 && dim(0) == 1)
      return ConstPlaneView(data_.data(), dim(1), dim(2));
    throw InvalidInput("tensor: to_image requires a single-channel tensor, got " +
                       shape_string(shape_));
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const { return data_.isFinite().all(); }

  static Eigen::Index count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                           std::multiplies<>());
  }

  static std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << "{";
    for (std::size_t i = 0; i < shape.size(); ++i)
      os << (i ? "," : "") << shape[i];
    os << "}";
    return os.str();
  }

  std::string shape_string() const { return shape_string(shape_); }

 private:
  Shape shape_;
  Flat data_;
};

using TensorD = Tensor<double>;

}  // namespace cellseg
