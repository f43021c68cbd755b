#include <doctest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "sasvr/error.hpp"
#include "sasvr/nn/attention.hpp"
#include "sasvr/nn/blocks.hpp"
#include "sasvr/random.hpp"

using namespace sasvr;
using namespace sasvr::nn;

namespace {

using TensorD = Tensor<double>;

TensorD random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

double dot(const TensorD& a, const TensorD& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= 1e-6 * std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// Loss <r, f(x)> with random r; compares backward() against central
// differences for sampled parameter and input entries.
void check_gradients(ParameterSet<double>& params, TensorD& x,
                     const std::function<TensorD(const TensorD&)>& forward,
                     const std::function<TensorD(const TensorD&)>& backward, Rng& rng,
                     int samples = 6, bool input_grad = true) {
  const TensorD y0 = forward(x);
  const TensorD r = random_tensor(y0.shape(), rng);
  params.zero_grad();
  forward(x);
  const TensorD dx = backward(r);
  auto loss_at = [&]() { return dot(r, forward(x)); };
  const double h = 1e-6;
  for (auto& [name, p] : params.params) {
    for (int s = 0; s < samples; ++s) {
      const std::size_t i = rng.index(p->value.size());
      const double keep = p->value[i];
      const double fd = oracle::central_difference(
          [&](double v) {
            p->value[i] = v;
            return loss_at();
          },
          keep, h);
      p->value[i] = keep;
      INFO(name, "[", i, "]");
      CHECK(close(p->grad[i], fd));
    }
  }
  if (!input_grad) return;
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = rng.index(x.size());
    const double keep = x[i];
    const double fd = oracle::central_difference(
        [&](double v) {
          x[i] = v;
          return loss_at();
        },
        keep, h);
    x[i] = keep;
    INFO("input[", i, "]");
    CHECK(close(dx[i], fd));
  }
}

// Direct 7-loop convolution.
TensorD naive_conv(const TensorD& x, Conv3d<double>& conv) {
  const auto& o = conv.options();
  const int n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const auto od = conv.output_dims({d, h, w});
  const int cin_g = c / o.groups, cout_g = o.out_channels / o.groups;
  TensorD y({n, o.out_channels, od[0], od[1], od[2]});
  const auto& wt = conv.weight().value;
  for (int b = 0; b < n; ++b)
    for (int oc = 0; oc < o.out_channels; ++oc)
      for (int z = 0; z < od[0]; ++z)
        for (int yy = 0; yy < od[1]; ++yy)
          for (int xx = 0; xx < od[2]; ++xx) {
            double acc = conv.bias() ? conv.bias()->value[static_cast<std::size_t>(oc)] : 0.0;
            const int g = oc / cout_g;
            for (int ic = 0; ic < cin_g; ++ic)
              for (int kz = 0; kz < o.kernel[0]; ++kz)
                for (int ky = 0; ky < o.kernel[1]; ++ky)
                  for (int kx = 0; kx < o.kernel[2]; ++kx) {
                    const int iz = z * o.stride[0] - o.padding[0] + kz;
                    const int iy = yy * o.stride[1] - o.padding[1] + ky;
                    const int ix = xx * o.stride[2] - o.padding[2] + kx;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= d || iy >= h || ix >= w) continue;
                    const double xv =
                        x[((((static_cast<std::size_t>(b) * c) + g * cin_g + ic) * d + iz) * h + iy) * w + ix];
                    const double wv =
                        wt[(((static_cast<std::size_t>(oc) * cin_g + ic) * o.kernel[0] + kz) * o.kernel[1] + ky) *
                               o.kernel[2] + kx];
                    acc += xv * wv;
                  }
            y[((((static_cast<std::size_t>(b) * o.out_channels) + oc) * od[0] + z) * od[1] + yy) * od[2] + xx] = acc;
          }
  return y;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("a 3x3 convolution from 2 to 4 channels with bias has 76 parameters") {
  Rng rng(1);
  Conv2d<double> conv(2, 4, 3, 1, 1, true, rng);
  ParameterSet<double> set;
  conv.collect("", set);
  CHECK(set.scalar_count() == 76);
}

TEST_CASE("convolution matches the direct loop") {
  Rng rng(2);
  struct Case {
    ConvOptions o;
    std::vector<int> shape;
  };
  const Case cases[] = {
      {{3, 4, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 1, true}, {2, 3, 5, 6, 7}},
      {{4, 6, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, 2, false}, {2, 4, 5, 6, 7}},
      {{4, 8, {1, 1, 1}, {2, 2, 2}, {0, 0, 0}, 1, false}, {1, 4, 5, 4, 3}},
      {{6, 6, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, 3, true}, {1, 6, 3, 5, 5}},
  };
  for (const auto& c : cases) {
    Conv3d<double> conv(c.o, rng);
    const TensorD x = random_tensor(c.shape, rng);
    const TensorD y = conv.forward(x, Mode::Eval);
    const TensorD ref = naive_conv(x, conv);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("convolution gradients") {
  Rng rng(3);
  for (const ConvOptions& o : {ConvOptions{3, 4, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}, 1, true},
                               ConvOptions{4, 4, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 2, false},
                               ConvOptions{4, 6, {1, 1, 1}, {2, 2, 2}, {0, 0, 0}, 1, false}}) {
    Conv3d<double> conv(o, rng);
    ParameterSet<double> set;
    conv.collect("", set);
    TensorD x = random_tensor({2, o.in_channels, 4, 5, 3}, rng);
    check_gradients(set, x, [&](const TensorD& in) { return conv.forward(in, Mode::Train); },
                    [&](const TensorD& dy) { return conv.backward(dy); }, rng);
  }
}

TEST_CASE("batch norm gradients and running statistics") {
  Rng rng(4);
  BatchNorm<double> bn(3);
  ParameterSet<double> set;
  bn.collect("", set);
  REQUIRE(set.buffers.size() == 2);
  for (auto& [n, p] : set.params)
    for (auto& v : p->value.values()) v += 0.3 * rng.normal();
  TensorD x = random_tensor({4, 3, 2, 3, 2}, rng, 2.0);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += 1.5;
  check_gradients(set, x, [&](const TensorD& in) { return bn.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return bn.backward(dy); }, rng);

  BatchNorm<double> fresh(3);
  fresh.forward(x, Mode::Train);
  // running mean moved 10% of the way from 0 towards the batch mean
  double mean0 = 0.0;
  const std::size_t per = x.inner_size(2);
  for (int b = 0; b < 4; ++b)
    for (std::size_t i = 0; i < per; ++i) mean0 += x[(static_cast<std::size_t>(b) * 3) * per + i];
  mean0 /= 4.0 * static_cast<double>(per);
  CHECK(fresh.running_mean()[0] == doctest::Approx(0.1 * mean0));

  const TensorD e1 = fresh.forward(x, Mode::Eval);
  const TensorD e2 = fresh.forward(x, Mode::Eval);
  CHECK(e1.values() == e2.values());
}

TEST_CASE("linear and layer norm gradients") {
  Rng rng(5);
  Linear<double> lin(5, 3, rng);
  ParameterSet<double> ls;
  lin.collect("", ls);
  TensorD x = random_tensor({4, 5}, rng);
  check_gradients(ls, x, [&](const TensorD& in) { return lin.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return lin.backward(dy); }, rng);

  LayerNorm<double> ln(6);
  ParameterSet<double> ns;
  ln.collect("", ns);
  for (auto& [n, p] : ns.params)
    for (auto& v : p->value.values()) v += 0.3 * rng.normal();
  TensorD z = random_tensor({3, 6}, rng);
  check_gradients(ns, z, [&](const TensorD& in) { return ln.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return ln.backward(dy); }, rng);

  Linear<double> zero(4, 6, rng, LinearInit::Zero);
  const TensorD out = zero.forward(random_tensor({2, 4}, rng), Mode::Eval);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("attention and encoder layer gradients") {
  Rng rng(6);
  MultiHeadAttention<double> mha(8, 2, rng);
  ParameterSet<double> ms;
  mha.collect("", ms);
  TensorD x = random_tensor({2 * 5, 8}, rng);
  check_gradients(ms, x, [&](const TensorD& in) { return mha.forward(in, 5, Mode::Train); },
                  [&](const TensorD& dy) { return mha.backward(dy); }, rng);

  TransformerEncoderLayer<double> layer(8, 4, 16, rng);
  ParameterSet<double> es;
  layer.collect("", es);
  TensorD y = random_tensor({3 * 4, 8}, rng);
  check_gradients(es, y, [&](const TensorD& in) { return layer.forward(in, 4, Mode::Train); },
                  [&](const TensorD& dy) { return layer.backward(dy); }, rng);
}

TEST_CASE("scorer equals the per-head loop implementation") {
  Rng rng(7);
  for (TokenMode mode : {TokenMode::Slice, TokenMode::Row}) {
    ScorerOptions o{6, 8, 8, 16, 4, 2, 32, mode};
    SliceScorer<double> scorer(o, rng);
    const TensorD stack = random_tensor({3, 6, 8, 8}, rng);
    const TensorD s = scorer.forward(stack, Mode::Eval);
    const auto ref = oracle::scorer_forward(scorer, {stack.values().begin(), stack.values().end()}, 3);
    REQUIRE(ref.size() == s.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      worst = std::max(worst, std::abs(s[i] - ref[i]));
      CHECK(s[i] > 0.0);
      CHECK(s[i] < 1.0);
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("scorer parameter gradients") {
  Rng rng(8);
  SliceScorer<double> scorer({3, 4, 4, 8, 2, 2, 16, TokenMode::Slice}, rng);
  ParameterSet<double> set;
  scorer.collect("", set);
  TensorD stack = random_tensor({2, 3, 4, 4}, rng);
  check_gradients(
      set, stack, [&](const TensorD& in) { return scorer.forward(in, Mode::Train); },
      [&](const TensorD& dy) {
        scorer.backward(dy);
        return TensorD();
      },
      rng, 4, false);
}

TEST_CASE("residual block gradients") {
  Rng rng(9);
  BasicBlock3d<double> basic(2, 4, 2, rng);
  ParameterSet<double> bs;
  basic.collect("", bs);
  TensorD x = random_tensor({2, 2, 4, 4, 4}, rng);
  check_gradients(bs, x, [&](const TensorD& in) { return basic.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return basic.backward(dy); }, rng, 3);

  ResNeXtBlock3d<double> next(8, 8, 6, 4, 1, rng);
  ParameterSet<double> ns;
  next.collect("", ns);
  CHECK(ns.scalar_count() == ResNeXtBlock3d<double>::parameter_count(8, 8, 6, 4, 1));
  TensorD y = random_tensor({2, 8, 2, 3, 2}, rng);
  check_gradients(ns, y, [&](const TensorD& in) { return next.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return next.backward(dy); }, rng, 3);
}

TEST_CASE("encoders and regressor shapes and gradients") {
  Rng rng(10);
  ResNet10Encoder<double> enc(1, {2, 2, 4, 4}, rng);
  const auto od = ResNet10Encoder<double>::output_dims({24, 32, 32});
  CHECK(od == std::array<int, 3>{2, 2, 2});
  TensorD v = random_tensor({2, 1, 24, 32, 32}, rng);
  CHECK(enc.forward(v, Mode::Eval).shape() == std::vector<int>{2, 4, 2, 2, 2});

  SliceEncoder<double> senc(3, 8, {2, 2, 2, 2}, rng);
  ParameterSet<double> ss;
  senc.collect("", ss);
  TensorD stack = random_tensor({2, 3, 8, 8}, rng);
  check_gradients(ss, stack, [&](const TensorD& in) { return senc.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return senc.backward(dy, true); }, rng, 2);

  Regressor<double> reg(4, 8, 8, 4, rng);
  ParameterSet<double> rs;
  reg.collect("", rs);
  for (auto& v2 : reg.head().weight().value.values()) v2 = 0.1 * rng.normal();
  TensorD fused = random_tensor({2, 4, 2, 2, 2}, rng);
  check_gradients(rs, fused, [&](const TensorD& in) { return reg.forward(in, Mode::Train); },
                  [&](const TensorD& dy) { return reg.backward(dy); }, rng, 3);
}

TEST_CASE("global average pooling") {
  TensorD x({1, 2, 2, 1, 1});
  x.values() = {1, 3, 5, 9};
  const TensorD p = global_avg_pool(x);
  CHECK(p.shape() == std::vector<int>{1, 2});
  CHECK(p[0] == 2.0);
  CHECK(p[1] == 7.0);
  TensorD d({1, 2});
  d.values() = {2, 4};
  CHECK(global_avg_pool_backward(d, x.shape()).values() == AlignedVector<double>{1, 1, 2, 2});
}

}  // TEST_SUITE
