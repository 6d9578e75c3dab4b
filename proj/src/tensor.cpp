#include "ff/tensor.hpp"

#include "ff/errors.hpp"

#include <sstream>

namespace ff {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (Index d : shape) {
    if (d < 1) throw DimensionError("tensor shape entries must be >= 1, got " + to_string(shape));
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = Vector<Scalar>::Zero(numel(shape_));
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (numel(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " does not match " + std::to_string(data_.size()) +
                         " values");
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values) {
  Vector<Scalar> data(static_cast<Index>(values.size()));
  Index i = 0;
  for (Scalar v : values) data[i++] = v;
  return Tensor(std::move(shape), std::move(data));
}

template <typename Scalar>
Index Tensor<Scalar>::offset(std::initializer_list<Index> idx) const {
  if (idx.size() != shape_.size()) throw DimensionError("index rank does not match tensor rank");
  Index off = 0;
  std::size_t axis = 0;
  for (Index i : idx) {
    if (i < 0 || i >= shape_[axis]) throw DimensionError("index out of range on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

template <typename Scalar>
Scalar& Tensor<Scalar>::at(std::initializer_list<Index> idx) {
  return data_[offset(idx)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> idx) const {
  return data_[offset(idx)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape_));
  return data_[0];
}

template <typename Scalar>
typename Tensor<Scalar>::MatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) {
  if (rows * cols != size()) throw DimensionError("matrix view does not cover tensor " + to_string(shape_));
  return MatrixMap(data(), rows, cols);
}

template <typename Scalar>
typename Tensor<Scalar>::ConstMatrixMap Tensor<Scalar>::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw DimensionError("matrix view does not cover tensor " + to_string(shape_));
  return ConstMatrixMap(data(), rows, cols);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  if (numel(shape) != size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace ff
