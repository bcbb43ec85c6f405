#pragma once

#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "sketchhash/error.hpp"

namespace sketchhash {

using Shape = std::vector<Eigen::Index>;

std::string shape_string(const Shape& shape);

inline Eigen::Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Eigen::Index{1},
                         [](Eigen::Index a, Eigen::Index b) { return a * b; });
}

/// Dense row-major array with an arbitrary shape.
///
/// Storage is a flat Eigen vector; `matrix()` views it as
/// [shape[0], size / shape[0]] so two-dimensional work goes through Eigen
/// expressions directly. Rank-1 tensors view as a single row.
template <typename Scalar>
class BasicTensor {
 public:
  using Storage = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixView = Eigen::Map<RowMatrix>;
  using ConstMatrixView = Eigen::Map<const RowMatrix>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape)
      : shape_(std::move(shape)), data_(Storage::Zero(shape_size(shape_))) {}

  BasicTensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  template <typename Derived>
  static BasicTensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    BasicTensor t(Shape{m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }

  static BasicTensor scalar(Scalar v) {
    BasicTensor t(Shape{});
    t.data_[0] = v;
    return t;
  }

  static BasicTensor filled(Shape shape, Scalar v) {
    BasicTensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Eigen::Index rank() const { return static_cast<Eigen::Index>(shape_.size()); }
  Eigen::Index dim(std::size_t i) const { return shape_.at(i); }
  Eigen::Index size() const { return data_.size(); }

  Storage& flat() { return data_; }
  const Storage& flat() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Eigen::Index rows() const { return shape_.size() < 2 ? 1 : shape_[0]; }
  Eigen::Index cols() const { return rows() == 0 ? 0 : size() / rows(); }
  MatrixView matrix() { return MatrixView(data_.data(), rows(), cols()); }
  ConstMatrixView matrix() const { return ConstMatrixView(data_.data(), rows(), cols()); }

  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  void reshape(Shape shape) {
    if (shape_size(shape) != size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = BasicTensor<double>;

}  // namespace sketchhash
