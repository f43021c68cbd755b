#pragma once

#include <array>
#include <memory>
#include <optional>
#include <vector>

#include "sasvr/nn/layers.hpp"

namespace sasvr::nn {

// conv3-BN-ReLU-conv3-BN plus identity or (conv1-BN) shortcut, then ReLU.
template <typename T>
class BasicBlock3d : public Module<T> {
 public:
  BasicBlock3d(int in_channels, int out_channels, int stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

 private:
  Conv3d<T> conv1_;
  BatchNorm<T> bn1_;
  Conv3d<T> conv2_;
  BatchNorm<T> bn2_;
  std::optional<Conv3d<T>> down_conv_;
  std::optional<BatchNorm<T>> down_bn_;
  Tensor<T> act1_;
  Tensor<T> out_;
};

// ResNeXt bottleneck: conv1-BN-ReLU, grouped conv3-BN-ReLU, conv1-BN, plus
// shortcut, then ReLU.
template <typename T>
class ResNeXtBlock3d : public Module<T> {
 public:
  ResNeXtBlock3d(int in_channels, int width, int out_channels, int cardinality, int stride,
                 Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  // Closed-form trainable parameter count of a block with these settings.
  static std::size_t parameter_count(int in_channels, int width, int out_channels, int cardinality,
                                     int stride);

 private:
  Conv3d<T> reduce_;
  BatchNorm<T> bn1_;
  Conv3d<T> grouped_;
  BatchNorm<T> bn2_;
  Conv3d<T> expand_;
  BatchNorm<T> bn3_;
  std::optional<Conv3d<T>> down_conv_;
  std::optional<BatchNorm<T>> down_bn_;
  Tensor<T> act1_;
  Tensor<T> act2_;
  Tensor<T> out_;
};

// 3D ResNet-10: stem conv3-BN-ReLU at full resolution, then four stages of
// one basic block each, every stage downsampling by 2.
template <typename T>
class ResNet10Encoder : public Module<T> {
 public:
  ResNet10Encoder(int in_channels, const std::array<int, 4>& widths, Rng& rng);

  // [N, C, D, H, W] -> [N, widths[3], D/16, H/16, W/16] (ceil)
  Tensor<T> forward(const Tensor<T>& x, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad = true);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  static std::array<int, 3> output_dims(const std::array<int, 3>& in);

 private:
  Conv3d<T> stem_;
  BatchNorm<T> stem_bn_;
  std::vector<std::unique_ptr<BasicBlock3d<T>>> stages_;
  Tensor<T> stem_act_;
};

// 2D conv lifting K slice channels to D depth channels, BN-ReLU, then the
// result is read as a single-channel depth-D volume for a ResNet-10.
template <typename T>
class SliceEncoder : public Module<T> {
 public:
  SliceEncoder(int slices, int depth, const std::array<int, 4>& widths, Rng& rng);

  Tensor<T> forward(const Tensor<T>& weighted_stack, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy, bool need_input_grad);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

 private:
  Conv2d<T> lift_;
  BatchNorm<T> lift_bn_;
  ResNet10Encoder<T> resnet_;
  Tensor<T> lift_act_;
};

// Three ResNeXt blocks, global average pooling, linear head to 6 values.
template <typename T>
class Regressor : public Module<T> {
 public:
  Regressor(int in_channels, int width, int out_channels, int cardinality, Rng& rng);

  Tensor<T> forward(const Tensor<T>& fused, Mode mode);  // -> [N, 6]
  Tensor<T> backward(const Tensor<T>& dparams);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  Linear<T>& head() { return head_; }

 private:
  std::vector<std::unique_ptr<ResNeXtBlock3d<T>>> blocks_;
  Linear<T> head_;
  std::vector<int> pooled_shape_;
};

}  // namespace sasvr::nn
