#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sasvr/nn/tensor.hpp"
#include "sasvr/random.hpp"

namespace sasvr::nn {

// Layers keep whatever they need for backward from the last Train-mode
// forward; Eval-mode forwards leave layer state untouched.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix, ParameterSet<T>& set) = 0;
};

struct ConvOptions {
  int in_channels = 1;
  int out_channels = 1;
  std::array<int, 3> kernel{3, 3, 3};
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> padding{1, 1, 1};
  int groups = 1;
  bool bias = false;
};

// Grouped 3D convolution on [N, C, D, H, W] via im2col + GEMM.
template <typename T>
class Conv3d : public Module<T> {
 public:
  Conv3d(const ConvOptions& options, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  // Returns dL/dx (empty when need_input_grad is false); accumulates weight grads.
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);

  std::array<int, 3> output_dims(const std::array<int, 3>& in) const;
  const ConvOptions& options() const { return opt_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return bias_ ? &*bias_ : nullptr; }
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

 private:
  bool pointwise() const;

  ConvOptions opt_;
  Parameter<T> weight_;  // [out, in / groups, kd, kh, kw]
  std::optional<Parameter<T>> bias_;
  Tensor<T> input_;
};

// 2D convolution on [N, C, H, W]; a Conv3d with a unit depth kernel.
template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, bool bias,
         Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  Conv3d<T>& conv() { return conv_; }
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

 private:
  Conv3d<T> conv_;
};

// Per-channel batch normalization over [N, C, ...].
template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(int channels, double momentum = 0.1, double eps = 1e-5);

  Tensor<T> forward(Tensor<T> x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  int channels_;
  double momentum_;
  double eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;
};

enum class LinearInit { Default, Zero };

// y = x W^T + b over the last dimension of a [M, in] tensor.
template <typename T>
class Linear : public Module<T> {
 public:
  Linear(int in_features, int out_features, Rng& rng, LinearInit init = LinearInit::Default);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_;
  int out_;
  Parameter<T> weight_;  // [out, in]
  Parameter<T> bias_;
  Tensor<T> input_;
};

// Normalization over the last dimension of a [M, E] tensor.
template <typename T>
class LayerNorm : public Module<T> {
 public:
  explicit LayerNorm(int features, double eps = 1e-5);

  Tensor<T> forward(Tensor<T> x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }

 private:
  int features_;
  double eps_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;
};

template <typename T>
void relu_inplace(Tensor<T>& x);

// While set, every relu_inplace call on this thread appends one byte per
// element (input > 0) to `trace`. Pass nullptr to stop.
void set_relu_trace(std::vector<std::uint8_t>* trace);

// dy masked by (activation > 0), in place.
template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& activation);

template <typename T>
T sigmoid(T x);

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x);

// [N, C, ...] -> [N, C]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const std::vector<int>& input_shape);

}  // namespace sasvr::nn
