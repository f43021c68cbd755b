#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace oracle {

namespace {
double rad(double deg) { return deg * std::numbers::pi / 180.0; }
}  // namespace

Eigen::Matrix3d rotation(const RigidParams& p) {
  using Eigen::AngleAxisd;
  return (AngleAxisd(rad(p.alpha_z), Vec3::UnitZ()) * AngleAxisd(rad(p.alpha_y), Vec3::UnitY()) *
          AngleAxisd(rad(p.alpha_x), Vec3::UnitX()))
      .toRotationMatrix();
}

Eigen::Matrix4d rigid_matrix(const RigidParams& p, const Vec3& centre) {
  Eigen::Matrix4d shift_in = Eigen::Matrix4d::Identity();
  shift_in.block<3, 1>(0, 3) = -centre;
  Eigen::Matrix4d rot = Eigen::Matrix4d::Identity();
  rot.block<3, 3>(0, 0) = rotation(p);
  Eigen::Matrix4d shift_out = Eigen::Matrix4d::Identity();
  shift_out.block<3, 1>(0, 3) = centre + Vec3(p.t_x, p.t_y, p.t_z);
  return shift_out * rot * shift_in;
}

Vec3 voxel_position(const VolumeGeometry& g, int i, int j, int k) {
  const double s = g.spacing;
  return Vec3((i - 0.5 * (g.width() - 1)) * s, (j - 0.5 * (g.height() - 1)) * s,
              (k - 0.5 * (g.depth() - 1)) * s) +
         g.rotation_center;
}

std::vector<Vec3> grid_points(const VolumeGeometry& g) {
  std::vector<Vec3> pts;
  for (int k = 0; k < g.depth(); ++k)
    for (int j = 0; j < g.height(); ++j)
      for (int i = 0; i < g.width(); ++i) pts.push_back(voxel_position(g, i, j, k));
  return pts;
}

double grid_distance(const Eigen::Matrix4d& a, const Eigen::Matrix4d& b, const VolumeGeometry& g) {
  double sum = 0.0;
  const auto pts = grid_points(g);
  for (const auto& p : pts) {
    const Eigen::Vector4d h(p.x(), p.y(), p.z(), 1.0);
    sum += ((a * h) - (b * h)).head<3>().norm();
  }
  return sum / static_cast<double>(pts.size());
}

double trilinear(const Volume& v, double i, double j, double k) {
  const int i0 = static_cast<int>(std::floor(i));
  const int j0 = static_cast<int>(std::floor(j));
  const int k0 = static_cast<int>(std::floor(k));
  double acc = 0.0;
  for (int dk = 0; dk <= 1; ++dk) {
    for (int dj = 0; dj <= 1; ++dj) {
      for (int di = 0; di <= 1; ++di) {
        const int ii = i0 + di, jj = j0 + dj, kk = k0 + dk;
        const double w = (di ? i - i0 : 1.0 - (i - i0)) * (dj ? j - j0 : 1.0 - (j - j0)) *
                         (dk ? k - k0 : 1.0 - (k - k0));
        if (ii < 0 || jj < 0 || kk < 0 || ii >= v.geometry.width() ||
            jj >= v.geometry.height() || kk >= v.geometry.depth()) {
          continue;
        }
        acc += w * v.at(kk, jj, ii);
      }
    }
  }
  return acc;
}

namespace {

int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

double cubic_bspline(double x) {
  x = std::abs(x);
  if (x < 1.0) return 2.0 / 3.0 - x * x + 0.5 * x * x * x;
  if (x < 2.0) return (2.0 - x) * (2.0 - x) * (2.0 - x) / 6.0;
  return 0.0;
}

// Sampling matrix of the spline on the integer grid with mirrored ends.
Eigen::MatrixXd spline_system(int n) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int d = -1; d <= 1; ++d) a(i, reflect(i + d, n)) += cubic_bspline(d);
  return a;
}

}  // namespace

std::vector<double> spline_coefficients(const Volume& v) {
  const int d = v.geometry.depth(), h = v.geometry.height(), w = v.geometry.width();
  std::vector<double> c(v.data.begin(), v.data.end());
  auto idx = [&](int k, int j, int i) { return (static_cast<std::size_t>(k) * h + j) * w + i; };
  const Eigen::MatrixXd sw = spline_system(w).inverse(), sh = spline_system(h).inverse(),
                        sd = spline_system(d).inverse();
  std::vector<double> tmp(c.size());
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        double s = 0;
        for (int q = 0; q < w; ++q) s += sw(i, q) * c[idx(k, j, q)];
        tmp[idx(k, j, i)] = s;
      }
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        double s = 0;
        for (int q = 0; q < h; ++q) s += sh(j, q) * tmp[idx(k, q, i)];
        c[idx(k, j, i)] = s;
      }
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < h; ++j)
      for (int i = 0; i < w; ++i) {
        double s = 0;
        for (int q = 0; q < d; ++q) s += sd(k, q) * c[idx(q, j, i)];
        tmp[idx(k, j, i)] = s;
      }
  return tmp;
}

double cubic_spline(const Volume& v, const std::vector<double>& coeffs, double i, double j, double k) {
  const auto& g = v.geometry;
  const int n[3] = {g.width(), g.height(), g.depth()};
  const double x[3] = {i, j, k};
  for (int a = 0; a < 3; ++a)
    if (x[a] <= -0.5 || x[a] >= n[a] - 0.5) return 0.0;
  double acc = 0.0;
  for (int kk = static_cast<int>(std::floor(k)) - 2; kk <= static_cast<int>(std::floor(k)) + 2; ++kk)
    for (int jj = static_cast<int>(std::floor(j)) - 2; jj <= static_cast<int>(std::floor(j)) + 2; ++jj)
      for (int ii = static_cast<int>(std::floor(i)) - 2; ii <= static_cast<int>(std::floor(i)) + 2; ++ii) {
        const double wgt = cubic_bspline(i - ii) * cubic_bspline(j - jj) * cubic_bspline(k - kk);
        if (wgt == 0.0) continue;
        acc += wgt * coeffs[(static_cast<std::size_t>(reflect(kk, n[2])) * n[1] + reflect(jj, n[1])) * n[0] +
                            reflect(ii, n[0])];
      }
  return acc;
}

Volume resample_cubic(const Volume& v, const Eigen::Matrix4d& m) {
  const Eigen::Matrix4d inv = m.inverse();
  const auto& g = v.geometry;
  const auto coeffs = spline_coefficients(v);
  Volume out = v;
  for (int k = 0; k < g.depth(); ++k) {
    for (int j = 0; j < g.height(); ++j) {
      for (int i = 0; i < g.width(); ++i) {
        const Vec3 x = voxel_position(g, i, j, k);
        const Eigen::Vector4d src = inv * Eigen::Vector4d(x.x(), x.y(), x.z(), 1.0);
        const Vec3 rel = (src.head<3>() - g.rotation_center) / g.spacing;
        out.at(k, j, i) = static_cast<float>(cubic_spline(v, coeffs, rel.x() + 0.5 * (g.width() - 1),
                                                          rel.y() + 0.5 * (g.height() - 1),
                                                          rel.z() + 0.5 * (g.depth() - 1)));
      }
    }
  }
  return out;
}

Volume resample(const Volume& v, const Eigen::Matrix4d& m) {
  const Eigen::Matrix4d inv = m.inverse();
  const auto& g = v.geometry;
  Volume out = v;
  for (int k = 0; k < g.depth(); ++k) {
    for (int j = 0; j < g.height(); ++j) {
      for (int i = 0; i < g.width(); ++i) {
        const Vec3 x = voxel_position(g, i, j, k);
        const Eigen::Vector4d src = inv * Eigen::Vector4d(x.x(), x.y(), x.z(), 1.0);
        const Vec3 rel = (src.head<3>() - g.rotation_center) / g.spacing;
        out.at(k, j, i) = static_cast<float>(trilinear(v, rel.x() + 0.5 * (g.width() - 1),
                                                       rel.y() + 0.5 * (g.height() - 1),
                                                       rel.z() + 0.5 * (g.depth() - 1)));
      }
    }
  }
  return out;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat weight_of(sasvr::nn::Linear<double>& l) {
  Mat w(l.out_features(), l.in_features());
  for (int r = 0; r < w.rows(); ++r)
    for (int c = 0; c < w.cols(); ++c) w(r, c) = l.weight().value[r * w.cols() + c];
  return w;
}

Eigen::VectorXd bias_of(sasvr::nn::Linear<double>& l) {
  Eigen::VectorXd b(l.out_features());
  for (int r = 0; r < b.size(); ++r) b(r) = l.bias().value[r];
  return b;
}

// rows are tokens
Mat linear(sasvr::nn::Linear<double>& l, const Mat& x) {
  Mat y = x * weight_of(l).transpose();
  y.rowwise() += bias_of(l).transpose();
  return y;
}

Mat layer_norm(sasvr::nn::LayerNorm<double>& ln, const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    double var = 0.0;
    for (int c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= x.cols();
    for (int c = 0; c < x.cols(); ++c) {
      y(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * ln.gamma().value[c] + ln.beta().value[c];
    }
  }
  return y;
}

Mat attention(sasvr::nn::MultiHeadAttention<double>& mha, const Mat& x) {
  const int s = static_cast<int>(x.rows()), e = mha.embed_dim(), heads = mha.heads();
  const int d = e / heads;
  const Mat qkv = linear(mha.in_proj(), x);
  Mat concat(s, e);
  for (int h = 0; h < heads; ++h) {
    for (int a = 0; a < s; ++a) {
      std::vector<double> logits(static_cast<std::size_t>(s));
      double peak = -1e300;
      for (int b = 0; b < s; ++b) {
        double dot = 0.0;
        for (int c = 0; c < d; ++c) dot += qkv(a, h * d + c) * qkv(b, e + h * d + c);
        logits[static_cast<std::size_t>(b)] = dot / std::sqrt(static_cast<double>(d));
        peak = std::max(peak, logits[static_cast<std::size_t>(b)]);
      }
      double z = 0.0;
      for (auto& l : logits) z += (l = std::exp(l - peak));
      for (int c = 0; c < d; ++c) {
        double acc = 0.0;
        for (int b = 0; b < s; ++b) acc += logits[static_cast<std::size_t>(b)] / z * qkv(b, 2 * e + h * d + c);
        concat(a, h * d + c) = acc;
      }
    }
  }
  return linear(mha.out_proj(), concat);
}

}  // namespace

std::vector<double> scorer_forward(sasvr::nn::SliceScorer<double>& scorer,
                                   const std::vector<double>& stack, int batch) {
  const auto& o = scorer.options();
  const int s = o.seq_len(), td = o.token_dim(), e = o.hidden_dim;
  std::vector<double> out;
  for (int n = 0; n < batch; ++n) {
    Mat tokens(s, td);
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < td; ++c) tokens(r, c) = stack[(static_cast<std::size_t>(n) * s + r) * td + c];
    Mat h = linear(scorer.embed(), tokens);
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < e; ++c) h(r, c) += scorer.positional().value[r * e + c];
    for (int l = 0; l < o.layers; ++l) {
      auto& layer = scorer.layer(l);
      h = layer_norm(layer.norm1(), h + attention(layer.attention(), h));
      Mat f = linear(layer.ffn1(), h).cwiseMax(0.0);
      h = layer_norm(layer.norm2(), h + linear(layer.ffn2(), f));
    }
    const Mat logits = linear(scorer.output(), h);
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < td; ++c) out.push_back(1.0 / (1.0 + std::exp(-logits(r, c))));
  }
  return out;
}

double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

double richardson_difference(const std::function<double(double)>& f, double x, double h) {
  return (4.0 * central_difference(f, x, h / 2.0) - central_difference(f, x, h)) / 3.0;
}

std::optional<double> smooth_derivative(const std::function<double(double)>& f, double x, double h,
                                        double agreement) {
  const double a = richardson_difference(f, x, h);
  const double b = richardson_difference(f, x, h / 4.0);
  if (std::abs(a - b) > agreement * std::max({std::abs(a), std::abs(b), 1e-12})) return std::nullopt;
  return b;
}

}  // namespace oracle
