#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fictplay/errors.hpp"

namespace fictplay {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Dense row-major n-dimensional array. Values live in an Eigen column array so
/// elementwise math can be written as Eigen expressions.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    values_ = Array::Zero(shape_size(shape_));
  }

  Tensor(Shape shape, Array values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != shape_size(shape_))
      throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                       shape_string(shape_));
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values)
      : Tensor(std::move(shape), Array(Eigen::Map<const Array>(values.begin(),
                                                               static_cast<Index>(values.size())))) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  static Tensor scalar(Scalar value) { return constant({}, value); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return values_.size() == 0 && shape_.empty(); }

  Array& values() { return values_; }
  const Array& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  /// Scalar value of a one-element tensor.
  Scalar item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    return values_[0];
  }

  template <typename... Ix>
  Scalar& at(Ix... ix) {
    return values_[offset({static_cast<Index>(ix)...})];
  }
  template <typename... Ix>
  Scalar at(Ix... ix) const {
    return values_[offset({static_cast<Index>(ix)...})];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw ShapeError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
    return Tensor(std::move(shape), values_);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, values_.template cast<Other>());
  }

  bool all_finite() const { return values_.isFinite().all(); }

  Scalar max_abs() const { return size() ? values_.abs().maxCoeff() : Scalar(0); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && (a.values_ == b.values_).all();
  }

 private:
  void check_extents() const {
    for (Index e : shape_)
      if (e <= 0) throw ShapeError("tensor extents must be positive: " + shape_string(shape_));
  }

  Index offset(std::initializer_list<Index> ix) const {
    if (ix.size() != shape_.size()) throw ShapeError("index rank mismatch");
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : ix) off = off * shape_[axis++] + i;
    return off;
  }

  Shape shape_;
  Array values_;
};

/// Throws NumericError naming `what` if `t` holds NaN or Inf.
template <typename Scalar>
void require_finite(const Tensor<Scalar>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace fictplay
