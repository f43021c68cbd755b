#include "sasvr/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "sasvr/error.hpp"

namespace sasvr::nn {

namespace {

thread_local std::vector<std::uint8_t>* relu_trace = nullptr;

struct ConvGeometry {
  int channels, depth, height, width;  // one group of the input
  int od, oh, ow;
  std::array<int, 3> kernel, stride, padding;
};

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(int out, int in, int stride, int pad, int k, int& lo, int& hi) {
  // need 0 <= o*stride - pad + k < in
  lo = std::max(0, (pad - k + stride - 1) / stride);
  hi = std::min(out, (in - 1 + pad - k) / stride + 1);
  if (in - 1 + pad - k < 0) hi = 0;
  if (hi < lo) hi = lo;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t plane_out = static_cast<std::size_t>(g.oh) * g.ow;
  const std::size_t v = static_cast<std::size_t>(g.od) * plane_out;
  const auto [kd, kh, kw] = g.kernel;
  const auto [sd, sh, sw] = g.stride;
  const auto [pd, ph, pw] = g.padding;
  std::size_t r = 0;
  for (int c = 0; c < g.channels; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.depth * g.height * g.width;
    for (int kz = 0; kz < kd; ++kz) {
      int zlo, zhi;
      valid_range(g.od, g.depth, sd, pd, kz, zlo, zhi);
      for (int ky = 0; ky < kh; ++ky) {
        int ylo, yhi;
        valid_range(g.oh, g.height, sh, ph, ky, ylo, yhi);
        for (int kx = 0; kx < kw; ++kx, ++r) {
          int xlo, xhi;
          valid_range(g.ow, g.width, sw, pw, kx, xlo, xhi);
          T* row = col + r * v;
          std::fill(row, row + v, T(0));
          for (int oz = zlo; oz < zhi; ++oz) {
            const int iz = oz * sd - pd + kz;
            for (int oy = ylo; oy < yhi; ++oy) {
              const int iy = oy * sh - ph + ky;
              const T* src = xc + (static_cast<std::size_t>(iz) * g.height + iy) * g.width;
              T* dst = row + static_cast<std::size_t>(oz) * plane_out +
                       static_cast<std::size_t>(oy) * g.ow;
              if (sw == 1) {
                const int off = kx - pw;
                std::memcpy(dst + xlo, src + xlo + off, sizeof(T) * (xhi - xlo));
              } else {
                for (int ox = xlo; ox < xhi; ++ox) dst[ox] = src[ox * sw - pw + kx];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t plane_out = static_cast<std::size_t>(g.oh) * g.ow;
  const std::size_t v = static_cast<std::size_t>(g.od) * plane_out;
  const auto [kd, kh, kw] = g.kernel;
  const auto [sd, sh, sw] = g.stride;
  const auto [pd, ph, pw] = g.padding;
  std::size_t r = 0;
  for (int c = 0; c < g.channels; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.depth * g.height * g.width;
    for (int kz = 0; kz < kd; ++kz) {
      int zlo, zhi;
      valid_range(g.od, g.depth, sd, pd, kz, zlo, zhi);
      for (int ky = 0; ky < kh; ++ky) {
        int ylo, yhi;
        valid_range(g.oh, g.height, sh, ph, ky, ylo, yhi);
        for (int kx = 0; kx < kw; ++kx, ++r) {
          int xlo, xhi;
          valid_range(g.ow, g.width, sw, pw, kx, xlo, xhi);
          const T* row = col + r * v;
          for (int oz = zlo; oz < zhi; ++oz) {
            const int iz = oz * sd - pd + kz;
            for (int oy = ylo; oy < yhi; ++oy) {
              const int iy = oy * sh - ph + ky;
              T* dst = xc + (static_cast<std::size_t>(iz) * g.height + iy) * g.width;
              const T* src = row + static_cast<std::size_t>(oz) * plane_out +
                             static_cast<std::size_t>(oy) * g.ow;
              for (int ox = xlo; ox < xhi; ++ox) dst[ox * sw - pw + kx] += src[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void register_param(ParameterSet<T>& set, const std::string& name, Parameter<T>& p) {
  set.params.emplace_back(name, &p);
}

}  // namespace

// ---------------------------------------------------------------- Conv3d

template <typename T>
Conv3d<T>::Conv3d(const ConvOptions& options, Rng& rng)
    : opt_(options),
      weight_({options.out_channels, std::max(options.in_channels / std::max(options.groups, 1), 1),
               options.kernel[0], options.kernel[1], options.kernel[2]}) {
  if (opt_.groups < 1 || opt_.in_channels % opt_.groups != 0 ||
      opt_.out_channels % opt_.groups != 0) {
    throw InvalidArgument("conv channels must be divisible by groups");
  }
  for (int a = 0; a < 3; ++a) {
    if (opt_.kernel[a] < 1 || opt_.stride[a] < 1 || opt_.padding[a] < 0) {
      throw InvalidArgument("bad conv kernel/stride/padding");
    }
  }
  const int fan_in = (opt_.in_channels / opt_.groups) * opt_.kernel[0] * opt_.kernel[1] *
                     opt_.kernel[2];
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& w : weight_.value.values()) w = static_cast<T>(std * rng.normal());
  if (opt_.bias) bias_.emplace(std::vector<int>{opt_.out_channels});
}

template <typename T>
bool Conv3d<T>::pointwise() const {
  return opt_.kernel == std::array<int, 3>{1, 1, 1} && opt_.stride == std::array<int, 3>{1, 1, 1} &&
         opt_.padding == std::array<int, 3>{0, 0, 0};
}

template <typename T>
std::array<int, 3> Conv3d<T>::output_dims(const std::array<int, 3>& in) const {
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = (in[a] + 2 * opt_.padding[a] - opt_.kernel[a]) / opt_.stride[a] + 1;
    if (out[a] < 1) throw InvalidArgument("conv input too small");
  }
  return out;
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 5 || x.dim(1) != opt_.in_channels) {
    throw InvalidArgument("conv3d expects [N, " + std::to_string(opt_.in_channels) +
                          ", D, H, W], got " + shape_string(x.shape()));
  }
  const int n_batch = x.dim(0);
  const std::array<int, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const auto od = output_dims(in);
  const int groups = opt_.groups;
  const int cg = opt_.in_channels / groups;
  const int og = opt_.out_channels / groups;
  const int kvol = opt_.kernel[0] * opt_.kernel[1] * opt_.kernel[2];
  const int kc = cg * kvol;
  const std::size_t in_vol = static_cast<std::size_t>(in[0]) * in[1] * in[2];
  const std::size_t v = static_cast<std::size_t>(od[0]) * od[1] * od[2];
  const ConvGeometry g{cg, in[0], in[1], in[2], od[0], od[1], od[2],
                       opt_.kernel, opt_.stride, opt_.padding};

  Tensor<T> y({n_batch, opt_.out_channels, od[0], od[1], od[2]});
  std::vector<T> col(pointwise() ? 0 : static_cast<std::size_t>(kc) * v);
  for (int n = 0; n < n_batch; ++n) {
    for (int gi = 0; gi < groups; ++gi) {
      const T* xg = x.data() + (static_cast<std::size_t>(n) * opt_.in_channels + gi * cg) * in_vol;
      const T* cptr = xg;
      if (!pointwise()) {
        im2col(xg, g, col.data());
        cptr = col.data();
      }
      ConstMatMap<T> cm(cptr, kc, static_cast<Eigen::Index>(v));
      ConstMatMap<T> wm(weight_.value.data() + static_cast<std::size_t>(gi) * og * kc, og, kc);
      MatMap<T> ym(y.data() + (static_cast<std::size_t>(n) * opt_.out_channels + gi * og) * v, og,
                   static_cast<Eigen::Index>(v));
      ym.noalias() = wm * cm;
    }
    if (bias_) {
      for (int o = 0; o < opt_.out_channels; ++o) {
        T* yo = y.data() + (static_cast<std::size_t>(n) * opt_.out_channels + o) * v;
        const T b = bias_->value[static_cast<std::size_t>(o)];
        for (std::size_t i = 0; i < v; ++i) yo[i] += b;
      }
    }
  }
  if (mode == Mode::Train) input_ = x;
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  if (input_.empty()) throw InvalidArgument("conv3d backward without a training forward");
  const Tensor<T>& x = input_;
  const int n_batch = x.dim(0);
  const std::array<int, 3> in{x.dim(2), x.dim(3), x.dim(4)};
  const auto od = output_dims(in);
  const int groups = opt_.groups;
  const int cg = opt_.in_channels / groups;
  const int og = opt_.out_channels / groups;
  const int kvol = opt_.kernel[0] * opt_.kernel[1] * opt_.kernel[2];
  const int kc = cg * kvol;
  const std::size_t in_vol = static_cast<std::size_t>(in[0]) * in[1] * in[2];
  const std::size_t v = static_cast<std::size_t>(od[0]) * od[1] * od[2];
  if (dy.size() != static_cast<std::size_t>(n_batch) * opt_.out_channels * v) {
    throw InvalidArgument("conv3d backward: gradient shape mismatch");
  }
  const ConvGeometry g{cg, in[0], in[1], in[2], od[0], od[1], od[2],
                       opt_.kernel, opt_.stride, opt_.padding};

  Tensor<T> dx;
  if (need_input_grad) dx = Tensor<T>(x.shape());
  std::vector<T> col(pointwise() ? 0 : static_cast<std::size_t>(kc) * v);
  std::vector<T> dcol(static_cast<std::size_t>(kc) * v);
  for (int n = 0; n < n_batch; ++n) {
    for (int gi = 0; gi < groups; ++gi) {
      const T* xg = x.data() + (static_cast<std::size_t>(n) * opt_.in_channels + gi * cg) * in_vol;
      const T* cptr = xg;
      if (!pointwise()) {
        im2col(xg, g, col.data());
        cptr = col.data();
      }
      ConstMatMap<T> cm(cptr, kc, static_cast<Eigen::Index>(v));
      ConstMatMap<T> dym(dy.data() + (static_cast<std::size_t>(n) * opt_.out_channels + gi * og) * v,
                         og, static_cast<Eigen::Index>(v));
      MatMap<T> dwm(weight_.grad.data() + static_cast<std::size_t>(gi) * og * kc, og, kc);
      dwm.noalias() += dym * cm.transpose();
      if (need_input_grad) {
        ConstMatMap<T> wm(weight_.value.data() + static_cast<std::size_t>(gi) * og * kc, og, kc);
        T* dxg = dx.data() + (static_cast<std::size_t>(n) * opt_.in_channels + gi * cg) * in_vol;
        if (pointwise()) {
          MatMap<T> dxm(dxg, kc, static_cast<Eigen::Index>(v));
          dxm.noalias() = wm.transpose() * dym;
        } else {
          MatMap<T> dcm(dcol.data(), kc, static_cast<Eigen::Index>(v));
          dcm.noalias() = wm.transpose() * dym;
          col2im(dcol.data(), g, dxg);
        }
      }
    }
    if (bias_) {
      for (int o = 0; o < opt_.out_channels; ++o) {
        const T* d = dy.data() + (static_cast<std::size_t>(n) * opt_.out_channels + o) * v;
        T s = 0;
        for (std::size_t i = 0; i < v; ++i) s += d[i];
        bias_->grad[static_cast<std::size_t>(o)] += s;
      }
    }
  }
  return dx;
}

template <typename T>
void Conv3d<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  register_param(set, prefix + "weight", weight_);
  if (bias_) register_param(set, prefix + "bias", *bias_);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
                  bool bias, Rng& rng)
    : conv_(ConvOptions{in_channels, out_channels, {1, kernel, kernel}, {1, stride, stride},
                        {0, padding, padding}, 1, bias},
            rng) {}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() != 4) throw InvalidArgument("conv2d expects [N, C, H, W]");
  Tensor<T> y = conv_.forward(x.reshaped({x.dim(0), x.dim(1), 1, x.dim(2), x.dim(3)}), mode);
  y.reshape({y.dim(0), y.dim(1), y.dim(3), y.dim(4)});
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  Tensor<T> dx = conv_.backward(dy, need_input_grad);
  if (!dx.empty()) dx.reshape({dx.dim(0), dx.dim(1), dx.dim(3), dx.dim(4)});
  return dx;
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  conv_.collect(prefix, set);
}

// ---------------------------------------------------------------- BatchNorm

template <typename T>
BatchNorm<T>::BatchNorm(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}),
      beta_({channels}),
      running_mean_({channels}),
      running_var_({channels}, T(1)) {
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm<T>::forward(Tensor<T> x, Mode mode) {
  if (x.rank() < 2 || x.dim(1) != channels_) {
    throw InvalidArgument("batchnorm expects [N, " + std::to_string(channels_) + ", ...]");
  }
  const int n_batch = x.dim(0);
  const std::size_t s = x.inner_size(2);
  const auto m = static_cast<double>(n_batch) * static_cast<double>(s);
  if (mode == Mode::Train) {
    inv_std_.assign(static_cast<std::size_t>(channels_), 0.0);
    normalized_ = Tensor<T>(x.shape());
  }
  for (int c = 0; c < channels_; ++c) {
    double mean, inv_std;
    if (mode == Mode::Train) {
      double sum = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const T* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * s;
        for (std::size_t i = 0; i < s; ++i) sum += p[i];
      }
      mean = sum / m;
      double sq = 0.0;
      for (int n = 0; n < n_batch; ++n) {
        const T* p = x.data() + (static_cast<std::size_t>(n) * channels_ + c) * s;
        for (std::size_t i = 0; i < s; ++i) {
          const double d = p[i] - mean;
          sq += d * d;
        }
      }
      const double var = sq / m;
      inv_std = 1.0 / std::sqrt(var + eps_);
      inv_std_[static_cast<std::size_t>(c)] = inv_std;
      const auto ci = static_cast<std::size_t>(c);
      running_mean_[ci] = static_cast<T>((1.0 - momentum_) * running_mean_[ci] + momentum_ * mean);
      const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
      running_var_[ci] =
          static_cast<T>((1.0 - momentum_) * running_var_[ci] + momentum_ * unbiased);
    } else {
      mean = running_mean_[static_cast<std::size_t>(c)];
      inv_std = 1.0 / std::sqrt(static_cast<double>(running_var_[static_cast<std::size_t>(c)]) + eps_);
    }
    const T g = gamma_.value[static_cast<std::size_t>(c)];
    const T b = beta_.value[static_cast<std::size_t>(c)];
    const T mu = static_cast<T>(mean), is = static_cast<T>(inv_std);
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * s;
      T* p = x.data() + off;
      if (mode == Mode::Train) {
        T* q = normalized_.data() + off;
        for (std::size_t i = 0; i < s; ++i) {
          q[i] = (p[i] - mu) * is;
          p[i] = g * q[i] + b;
        }
      } else {
        for (std::size_t i = 0; i < s; ++i) p[i] = g * ((p[i] - mu) * is) + b;
      }
    }
  }
  return x;
}

template <typename T>
Tensor<T> BatchNorm<T>::backward(const Tensor<T>& dy) {
  if (normalized_.empty()) throw InvalidArgument("batchnorm backward without a training forward");
  const int n_batch = dy.dim(0);
  const std::size_t s = dy.inner_size(2);
  const auto m = static_cast<double>(n_batch) * static_cast<double>(s);
  Tensor<T> dx(dy.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * s;
      const T* d = dy.data() + off;
      const T* q = normalized_.data() + off;
      for (std::size_t i = 0; i < s; ++i) {
        sum_dy += d[i];
        sum_dy_xhat += static_cast<double>(d[i]) * q[i];
      }
    }
    const auto ci = static_cast<std::size_t>(c);
    gamma_.grad[ci] += static_cast<T>(sum_dy_xhat);
    beta_.grad[ci] += static_cast<T>(sum_dy);
    const double scale = gamma_.value[ci] * inv_std_[ci] / m;
    const T k = static_cast<T>(scale * m);
    const T a = static_cast<T>(scale * sum_dy);
    const T b = static_cast<T>(scale * sum_dy_xhat);
    for (int n = 0; n < n_batch; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * channels_ + c) * s;
      const T* d = dy.data() + off;
      const T* q = normalized_.data() + off;
      T* o = dx.data() + off;
      for (std::size_t i = 0; i < s; ++i) o[i] = k * d[i] - a - b * q[i];
    }
  }
  return dx;
}

template <typename T>
void BatchNorm<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  register_param(set, prefix + "weight", gamma_);
  register_param(set, prefix + "bias", beta_);
  set.buffers.emplace_back(prefix + "running_mean", &running_mean_);
  set.buffers.emplace_back(prefix + "running_var", &running_var_);
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features, Rng& rng, LinearInit init)
    : in_(in_features), out_(out_features), weight_({out_features, in_features}),
      bias_({out_features}) {
  if (in_ < 1 || out_ < 1) throw InvalidArgument("linear layer sizes must be >= 1");
  if (init == LinearInit::Default) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (auto& w : weight_.value.values()) w = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& b : bias_.value.values()) b = static_cast<T>(rng.uniform(-bound, bound));
  }
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Mode mode) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) != in_) {
    throw InvalidArgument("linear layer expects last dimension " + std::to_string(in_) +
                          ", got " + shape_string(x.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(x.size() / static_cast<std::size_t>(in_));
  std::vector<int> shape = x.shape();
  shape.back() = out_;
  Tensor<T> y(shape);
  ConstMatMap<T> xm(x.data(), rows, in_);
  ConstMatMap<T> wm(weight_.value.data(), out_, in_);
  MatMap<T> ym(y.data(), rows, out_);
  ym.noalias() = xm * wm.transpose();
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bm(bias_.value.data(), out_);
  ym.rowwise() += bm;
  if (mode == Mode::Train) input_ = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy, bool need_input_grad) {
  if (input_.empty()) throw InvalidArgument("linear backward without a training forward");
  const auto rows = static_cast<Eigen::Index>(input_.size() / static_cast<std::size_t>(in_));
  ConstMatMap<T> xm(input_.data(), rows, in_);
  ConstMatMap<T> dym(dy.data(), rows, out_);
  MatMap<T> dwm(weight_.grad.data(), out_, in_);
  dwm.noalias() += dym.transpose() * xm;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> dbm(bias_.grad.data(), out_);
  dbm += dym.colwise().sum();
  if (!need_input_grad) return {};
  Tensor<T> dx(input_.shape());
  ConstMatMap<T> wm(weight_.value.data(), out_, in_);
  MatMap<T> dxm(dx.data(), rows, in_);
  dxm.noalias() = dym * wm;
  return dx;
}

template <typename T>
void Linear<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  register_param(set, prefix + "weight", weight_);
  register_param(set, prefix + "bias", bias_);
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(int features, double eps)
    : features_(features), eps_(eps), gamma_({features}), beta_({features}) {
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(Tensor<T> x, Mode mode) {
  if (x.rank() < 1 || x.dim(x.rank() - 1) != features_) {
    throw InvalidArgument("layernorm feature size mismatch");
  }
  const std::size_t rows = x.size() / static_cast<std::size_t>(features_);
  if (mode == Mode::Train) {
    normalized_ = Tensor<T>(x.shape());
    inv_std_.assign(rows, 0.0);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    T* p = x.data() + r * features_;
    double mean = 0.0;
    for (int i = 0; i < features_; ++i) mean += p[i];
    mean /= features_;
    double var = 0.0;
    for (int i = 0; i < features_; ++i) var += (p[i] - mean) * (p[i] - mean);
    var /= features_;
    const double is = 1.0 / std::sqrt(var + eps_);
    for (int i = 0; i < features_; ++i) {
      const T q = static_cast<T>((p[i] - mean) * is);
      if (mode == Mode::Train) normalized_[r * features_ + static_cast<std::size_t>(i)] = q;
      p[i] = gamma_.value[static_cast<std::size_t>(i)] * q + beta_.value[static_cast<std::size_t>(i)];
    }
    if (mode == Mode::Train) inv_std_[r] = is;
  }
  return x;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& dy) {
  if (normalized_.empty()) throw InvalidArgument("layernorm backward without a training forward");
  const std::size_t rows = dy.size() / static_cast<std::size_t>(features_);
  Tensor<T> dx(dy.shape());
  std::vector<double> g(static_cast<std::size_t>(features_));
  for (std::size_t r = 0; r < rows; ++r) {
    const T* d = dy.data() + r * features_;
    const T* q = normalized_.data() + r * features_;
    double sum_g = 0.0, sum_gq = 0.0;
    for (int i = 0; i < features_; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      gamma_.grad[ii] += d[i] * q[i];
      beta_.grad[ii] += d[i];
      g[ii] = static_cast<double>(d[i]) * gamma_.value[ii];
      sum_g += g[ii];
      sum_gq += g[ii] * q[i];
    }
    const double is = inv_std_[r];
    T* o = dx.data() + r * features_;
    for (int i = 0; i < features_; ++i) {
      o[i] = static_cast<T>(is * (g[static_cast<std::size_t>(i)] - sum_g / features_ -
                                  q[i] * sum_gq / features_));
    }
  }
  return dx;
}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  register_param(set, prefix + "weight", gamma_);
  register_param(set, prefix + "bias", beta_);
}

// ---------------------------------------------------------------- helpers

template <typename T>
void relu_inplace(Tensor<T>& x) {
  if (relu_trace) {
    for (const T v : x.values()) relu_trace->push_back(v > T(0) ? 1 : 0);
  }
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
}

void set_relu_trace(std::vector<std::uint8_t>* trace) { relu_trace = trace; }

template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& activation) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(activation[i] > T(0))) dy[i] = T(0);
  }
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
void add_inplace(Tensor<T>& acc, const Tensor<T>& x) {
  if (acc.size() != x.size()) throw InvalidArgument("tensor size mismatch in add");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const int n_batch = x.dim(0), c = x.dim(1);
  const std::size_t s = x.inner_size(2);
  Tensor<T> y({n_batch, c});
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n_batch) * c; ++nc) {
    double sum = 0.0;
    const T* p = x.data() + nc * s;
    for (std::size_t i = 0; i < s; ++i) sum += p[i];
    y[nc] = static_cast<T>(sum / static_cast<double>(s));
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const std::vector<int>& input_shape) {
  Tensor<T> dx(input_shape);
  const std::size_t s = dx.inner_size(2);
  const T inv = static_cast<T>(1.0 / static_cast<double>(s));
  for (std::size_t nc = 0; nc < dy.size(); ++nc) {
    T* p = dx.data() + nc * s;
    std::fill(p, p + s, dy[nc] * inv);
  }
  return dx;
}

#define SASVR_INSTANTIATE(T)                                                              \
  template class Conv3d<T>;                                                               \
  template class Conv2d<T>;                                                               \
  template class BatchNorm<T>;                                                            \
  template class Linear<T>;                                                               \
  template class LayerNorm<T>;                                                            \
  template void relu_inplace<T>(Tensor<T>&);                                              \
  template void relu_backward_inplace<T>(Tensor<T>&, const Tensor<T>&);                   \
  template T sigmoid<T>(T);                                                               \
  template void add_inplace<T>(Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                \
  template Tensor<T> global_avg_pool_backward<T>(const Tensor<T>&, const std::vector<int>&);

SASVR_INSTANTIATE(float)
SASVR_INSTANTIATE(double)

}  // namespace sasvr::nn
