#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace ff {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major n-dimensional array. Axis 0 is the batch axis for every
// activation tensor; a scalar is a tensor of shape {1}.
template <typename Scalar>
class Tensor {
 public:
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, Vector<Scalar> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor constant(Shape shape, Scalar value);
  static Tensor from(Shape shape, std::initializer_list<Scalar> values);
  static Tensor scalar(Scalar value) { return constant({1}, value); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Index dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }
  // Elements per sample along axis 0.
  Index sample_size() const { return shape_.empty() ? 0 : size() / shape_[0]; }

  Vector<Scalar>& vec() { return data_; }
  const Vector<Scalar>& vec() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }
  Scalar& at(std::initializer_list<Index> idx);
  Scalar at(std::initializer_list<Index> idx) const;
  Scalar item() const;

  // (batch) x (sample_size) view.
  MatrixMap matrix() { return MatrixMap(data(), shape_[0], sample_size()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data(), shape_[0], sample_size()); }
  MatrixMap matrix(Index rows, Index cols);
  ConstMatrixMap matrix(Index rows, Index cols) const;

  Tensor reshaped(Shape shape) const;
  void set_zero() { data_.setZero(); }
  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>());
  }

 private:
  Index offset(std::initializer_list<Index> idx) const;

  Shape shape_;
  Vector<Scalar> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace ff
