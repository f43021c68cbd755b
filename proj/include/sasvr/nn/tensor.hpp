#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sasvr::nn {

// Base addresses aligned to the widest SIMD width, so vectorized reductions peel identically
// wherever the buffer lands and results do not depend on heap layout.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

// Dense row-major tensor.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0));

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  AlignedVector<T>& values() { return data_; }
  const AlignedVector<T>& values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Same data, new shape with equal element count.
  void reshape(std::vector<int> shape);
  Tensor reshaped(std::vector<int> shape) const;

  void fill(T v);
  void zero() { fill(T(0)); }

  // Elements from dimension `from` onwards.
  std::size_t inner_size(int from) const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::vector<int> shape_;
  AlignedVector<T> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  explicit Parameter(std::vector<int> shape) : value(shape), grad(shape) {}
};

// Named view of every trainable parameter and persistent buffer of a model.
template <typename T>
struct ParameterSet {
  std::vector<std::pair<std::string, Parameter<T>*>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  std::size_t scalar_count() const;
  void zero_grad();
};

enum class Mode { Train, Eval };

}  // namespace sasvr::nn
