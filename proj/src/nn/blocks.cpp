#include "sasvr/nn/blocks.hpp"

#include "sasvr/error.hpp"

namespace sasvr::nn {

namespace {

ConvOptions conv3(int in, int out, int stride, int groups = 1) {
  return {in, out, {3, 3, 3}, {stride, stride, stride}, {1, 1, 1}, groups, false};
}

ConvOptions conv1(int in, int out, int stride) {
  return {in, out, {1, 1, 1}, {stride, stride, stride}, {0, 0, 0}, 1, false};
}

}  // namespace

// ---------------------------------------------------------------- BasicBlock3d

template <typename T>
BasicBlock3d<T>::BasicBlock3d(int in_channels, int out_channels, int stride, Rng& rng)
    : conv1_(conv3(in_channels, out_channels, stride), rng),
      bn1_(out_channels),
      conv2_(conv3(out_channels, out_channels, 1), rng),
      bn2_(out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    down_conv_.emplace(conv1(in_channels, out_channels, stride), rng);
    down_bn_.emplace(out_channels);
  }
}

template <typename T>
Tensor<T> BasicBlock3d<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = bn1_.forward(conv1_.forward(x, mode), mode);
  relu_inplace(h);
  Tensor<T> out = bn2_.forward(conv2_.forward(h, mode), mode);
  if (down_conv_) {
    add_inplace(out, down_bn_->forward(down_conv_->forward(x, mode), mode));
  } else {
    add_inplace(out, x);
  }
  relu_inplace(out);
  if (mode == Mode::Train) {
    act1_ = std::move(h);
    out_ = out;
  }
  return out;
}

template <typename T>
Tensor<T> BasicBlock3d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> g = dy;
  relu_backward_inplace(g, out_);
  Tensor<T> da1 = conv2_.backward(bn2_.backward(g));
  relu_backward_inplace(da1, act1_);
  Tensor<T> dx = conv1_.backward(bn1_.backward(da1), need_input_grad);
  if (down_conv_) {
    Tensor<T> ds = down_conv_->backward(down_bn_->backward(g), need_input_grad);
    if (need_input_grad) add_inplace(dx, ds);
  } else if (need_input_grad) {
    add_inplace(dx, g);
  }
  return dx;
}

template <typename T>
void BasicBlock3d<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  conv1_.collect(prefix + "conv1.", set);
  bn1_.collect(prefix + "bn1.", set);
  conv2_.collect(prefix + "conv2.", set);
  bn2_.collect(prefix + "bn2.", set);
  if (down_conv_) {
    down_conv_->collect(prefix + "downsample.conv.", set);
    down_bn_->collect(prefix + "downsample.bn.", set);
  }
}

// ---------------------------------------------------------------- ResNeXtBlock3d

template <typename T>
ResNeXtBlock3d<T>::ResNeXtBlock3d(int in_channels, int width, int out_channels, int cardinality,
                                  int stride, Rng& rng)
    : reduce_(conv1(in_channels, width, 1), rng),
      bn1_(width),
      grouped_(conv3(width, width, stride, cardinality), rng),
      bn2_(width),
      expand_(conv1(width, out_channels, 1), rng),
      bn3_(out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    down_conv_.emplace(conv1(in_channels, out_channels, stride), rng);
    down_bn_.emplace(out_channels);
  }
}

template <typename T>
std::size_t ResNeXtBlock3d<T>::parameter_count(int in_channels, int width, int out_channels,
                                               int cardinality, int stride) {
  const auto in = static_cast<std::size_t>(in_channels);
  const auto w = static_cast<std::size_t>(width);
  const auto out = static_cast<std::size_t>(out_channels);
  std::size_t n = in * w + 2 * w;                                  // reduce + BN
  n += w * (w / static_cast<std::size_t>(cardinality)) * 27 + 2 * w;  // grouped + BN
  n += w * out + 2 * out;                                         // expand + BN
  if (stride != 1 || in != out) n += in * out + 2 * out;          // projection shortcut
  return n;
}

template <typename T>
Tensor<T> ResNeXtBlock3d<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h1 = bn1_.forward(reduce_.forward(x, mode), mode);
  relu_inplace(h1);
  Tensor<T> h2 = bn2_.forward(grouped_.forward(h1, mode), mode);
  relu_inplace(h2);
  Tensor<T> out = bn3_.forward(expand_.forward(h2, mode), mode);
  if (down_conv_) {
    add_inplace(out, down_bn_->forward(down_conv_->forward(x, mode), mode));
  } else {
    add_inplace(out, x);
  }
  relu_inplace(out);
  if (mode == Mode::Train) {
    act1_ = std::move(h1);
    act2_ = std::move(h2);
    out_ = out;
  }
  return out;
}

template <typename T>
Tensor<T> ResNeXtBlock3d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> g = dy;
  relu_backward_inplace(g, out_);
  Tensor<T> d2 = expand_.backward(bn3_.backward(g));
  relu_backward_inplace(d2, act2_);
  Tensor<T> d1 = grouped_.backward(bn2_.backward(d2));
  relu_backward_inplace(d1, act1_);
  Tensor<T> dx = reduce_.backward(bn1_.backward(d1), need_input_grad);
  if (down_conv_) {
    Tensor<T> ds = down_conv_->backward(down_bn_->backward(g), need_input_grad);
    if (need_input_grad) add_inplace(dx, ds);
  } else if (need_input_grad) {
    add_inplace(dx, g);
  }
  return dx;
}

template <typename T>
void ResNeXtBlock3d<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  reduce_.collect(prefix + "conv1.", set);
  bn1_.collect(prefix + "bn1.", set);
  grouped_.collect(prefix + "conv2.", set);
  bn2_.collect(prefix + "bn2.", set);
  expand_.collect(prefix + "conv3.", set);
  bn3_.collect(prefix + "bn3.", set);
  if (down_conv_) {
    down_conv_->collect(prefix + "downsample.conv.", set);
    down_bn_->collect(prefix + "downsample.bn.", set);
  }
}

// ---------------------------------------------------------------- ResNet10Encoder

template <typename T>
ResNet10Encoder<T>::ResNet10Encoder(int in_channels, const std::array<int, 4>& widths, Rng& rng)
    : stem_(conv3(in_channels, widths[0], 1), rng), stem_bn_(widths[0]) {
  int prev = widths[0];
  for (int w : widths) {
    stages_.push_back(std::make_unique<BasicBlock3d<T>>(prev, w, 2, rng));
    prev = w;
  }
}

template <typename T>
std::array<int, 3> ResNet10Encoder<T>::output_dims(const std::array<int, 3>& in) {
  std::array<int, 3> d = in;
  for (int s = 0; s < 4; ++s) {
    for (int& v : d) v = (v - 1) / 2 + 1;
  }
  return d;
}

template <typename T>
Tensor<T> ResNet10Encoder<T>::forward(const Tensor<T>& x, Mode mode) {
  Tensor<T> h = stem_bn_.forward(stem_.forward(x, mode), mode);
  relu_inplace(h);
  if (mode == Mode::Train) stem_act_ = h;
  for (auto& stage : stages_) h = stage->forward(h, mode);
  return h;
}

template <typename T>
Tensor<T> ResNet10Encoder<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> g = dy;
  for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) g = (*it)->backward(g);
  relu_backward_inplace(g, stem_act_);
  return stem_.backward(stem_bn_.backward(g), need_input_grad);
}

template <typename T>
void ResNet10Encoder<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  stem_.collect(prefix + "stem.conv.", set);
  stem_bn_.collect(prefix + "stem.bn.", set);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    stages_[i]->collect(prefix + "layer" + std::to_string(i + 1) + ".", set);
  }
}

// ---------------------------------------------------------------- SliceEncoder

template <typename T>
SliceEncoder<T>::SliceEncoder(int slices, int depth, const std::array<int, 4>& widths, Rng& rng)
    : lift_(slices, depth, 3, 1, 1, false, rng), lift_bn_(depth), resnet_(1, widths, rng) {}

template <typename T>
Tensor<T> SliceEncoder<T>::forward(const Tensor<T>& weighted_stack, Mode mode) {
  Tensor<T> h = lift_bn_.forward(lift_.forward(weighted_stack, mode), mode);
  relu_inplace(h);
  if (mode == Mode::Train) lift_act_ = h;
  h.reshape({h.dim(0), 1, h.dim(1), h.dim(2), h.dim(3)});
  return resnet_.forward(h, mode);
}

template <typename T>
Tensor<T> SliceEncoder<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> g = resnet_.backward(dy, true);
  g.reshape(lift_act_.shape());
  relu_backward_inplace(g, lift_act_);
  return lift_.backward(lift_bn_.backward(g), need_input_grad);
}

template <typename T>
void SliceEncoder<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  lift_.collect(prefix + "lift.conv.", set);
  lift_bn_.collect(prefix + "lift.bn.", set);
  resnet_.collect(prefix + "resnet.", set);
}

// ---------------------------------------------------------------- Regressor

template <typename T>
Regressor<T>::Regressor(int in_channels, int width, int out_channels, int cardinality, Rng& rng)
    : head_(out_channels, 6, rng, LinearInit::Zero) {
  if (width % cardinality != 0) throw InvalidArgument("ResNeXt width must be divisible by cardinality");
  int prev = in_channels;
  for (int i = 0; i < 3; ++i) {
    blocks_.push_back(
        std::make_unique<ResNeXtBlock3d<T>>(prev, width, out_channels, cardinality, 1, rng));
    prev = out_channels;
  }
}

template <typename T>
Tensor<T> Regressor<T>::forward(const Tensor<T>& fused, Mode mode) {
  Tensor<T> h = blocks_[0]->forward(fused, mode);
  for (std::size_t i = 1; i < blocks_.size(); ++i) h = blocks_[i]->forward(h, mode);
  if (mode == Mode::Train) pooled_shape_ = h.shape();
  return head_.forward(global_avg_pool(h), mode);
}

template <typename T>
Tensor<T> Regressor<T>::backward(const Tensor<T>& dparams) {
  Tensor<T> g = global_avg_pool_backward(head_.backward(dparams), pooled_shape_);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

template <typename T>
void Regressor<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i]->collect(prefix + "block" + std::to_string(i + 1) + ".", set);
  }
  head_.collect(prefix + "head.", set);
}

template class BasicBlock3d<float>;
template class BasicBlock3d<double>;
template class ResNeXtBlock3d<float>;
template class ResNeXtBlock3d<double>;
template class ResNet10Encoder<float>;
template class ResNet10Encoder<double>;
template class SliceEncoder<float>;
template class SliceEncoder<double>;
template class Regressor<float>;
template class Regressor<double>;

}  // namespace sasvr::nn
