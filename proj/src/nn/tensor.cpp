#include "sasvr/nn/tensor.hpp"

#include <algorithm>

#include "sasvr/error.hpp"

namespace sasvr::nn {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InvalidArgument("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, T fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

template <typename T>
void Tensor<T>::reshape(std::vector<int> shape) {
  if (shape_size(shape) != data_.size()) {
    throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(std::vector<int> shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename T>
void Tensor<T>::fill(T v) {
  std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
std::size_t Tensor<T>::inner_size(int from) const {
  std::size_t n = 1;
  for (std::size_t i = static_cast<std::size_t>(from); i < shape_.size(); ++i) {
    n *= static_cast<std::size_t>(shape_[i]);
  }
  return n;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params) n += p->value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& [name, p] : params) p->grad.zero();
}

template class Tensor<float>;
template class Tensor<double>;
template struct ParameterSet<float>;
template struct ParameterSet<double>;

}  // namespace sasvr::nn
