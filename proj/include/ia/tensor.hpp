#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ia {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense N-dimensional array in row-major order. For 4-D tensors the layout
/// is (sample, channel, height, width).
template <typename Scalar>
class BasicTensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  /// Unset placeholder; holds no data.
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.setConstant(numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (static_cast<Index>(values.size()) != numel(shape_))
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       to_string(shape_));
    data_.resize(numel(shape_));
    std::copy(values.begin(), values.end(), data_.data());
  }

  BasicTensor(Shape shape, Vector data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != numel(shape_))
      throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), Scalar(0)); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), Scalar(1)); }
  static BasicTensor scalar(Scalar v) { return BasicTensor(Shape{1}, v); }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Vector& vec() { return data_; }
  const Vector& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Scalar& at(Index i, Index j) { return data_[i * shape_[1] + j]; }
  Scalar at(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  Scalar& at(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  Scalar at(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  Scalar& at(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  Scalar at(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// The tensor viewed as a (rows x cols) row-major matrix; rows*cols must equal size().
  MatrixMap matrix(Index rows, Index cols) {
    check_view(rows, cols);
    return MatrixMap(data_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_view(rows, cols);
    return ConstMatrixMap(data_.data(), rows, cols);
  }
  /// First axis as rows, remaining axes flattened into columns.
  MatrixMap matrix() { return matrix(shape_[0], size() / std::max<Index>(shape_[0], 1)); }
  ConstMatrixMap matrix() const {
    return matrix(shape_[0], size() / std::max<Index>(shape_[0], 1));
  }

  BasicTensor reshaped(Shape shape) const {
    if (numel(shape) != size())
      throw ShapeError("reshape: " + to_string(shape_) + " -> " + to_string(shape));
    return BasicTensor(std::move(shape), data_);
  }

  /// Copy of the i-th slice along the first axis.
  BasicTensor slice(Index i) const {
    Shape sub(shape_.begin() + 1, shape_.end());
    if (sub.empty()) sub = {1};
    const Index n = numel(sub);
    return BasicTensor(sub, Vector(data_.segment(i * n, n)));
  }

  void set_slice(Index i, const BasicTensor& part) {
    const Index n = size() / shape_[0];
    if (part.size() != n)
      throw ShapeError("set_slice: part of size " + std::to_string(part.size()) +
                       " into slices of " + std::to_string(n));
    data_.segment(i * n, n) = part.vec();
  }

  bool all_finite() const { return data_.allFinite(); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    for (Index d : shape)
      if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + to_string(shape));
  }

  void check_view(Index rows, Index cols) const {
    if (rows * cols != size())
      throw ShapeError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                       " of tensor " + to_string(shape_));
  }

  Shape shape_;
  Vector data_;
};

using Tensor = BasicTensor<double>;

template <typename Scalar>
Scalar max_abs_diff(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  return (a.vec() - b.vec()).cwiseAbs().maxCoeff();
}

}  // namespace ia
