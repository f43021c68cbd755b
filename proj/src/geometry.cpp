#include "sasvr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <vector>
#include <numbers>

#include <Eigen/LU>

#include "sasvr/error.hpp"

namespace sasvr {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

Mat3 rot_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Mat3 rot_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 rot_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

Mat3 d_rot_x(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return r;
}

Mat3 d_rot_y(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return r;
}

Mat3 d_rot_z(double rad) {
  const double c = std::cos(rad), s = std::sin(rad);
  Mat3 r;
  r << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return r;
}

Vec3 half_extent(const VolumeGeometry& g) {
  return Vec3((g.width() - 1) * 0.5, (g.height() - 1) * 0.5, (g.depth() - 1) * 0.5);
}

}  // namespace

void VolumeGeometry::validate() const {
  if (shape[0] < 1 || shape[1] < 1 || shape[2] < 1) {
    throw InvalidArgument("volume dimensions must be >= 1");
  }
  if (!(spacing > 0.0) || !std::isfinite(spacing)) {
    throw InvalidArgument("voxel spacing must be positive");
  }
  if (!rotation_center.allFinite()) {
    throw InvalidArgument("rotation centre must be finite");
  }
}

Vec3 VolumeGeometry::index_to_physical(const Vec3& ijk) const {
  return (ijk - half_extent(*this)) * spacing + rotation_center;
}

Vec3 VolumeGeometry::physical_to_index(const Vec3& p) const {
  return (p - rotation_center) / spacing + half_extent(*this);
}

Volume::Volume(VolumeGeometry geom, float fill)
    : geometry(std::move(geom)), data(geometry.voxel_count(), fill) {}

bool RigidParams::is_finite() const {
  for (double v : to_array()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

AffineTransform::AffineTransform(const Mat4& m) : m_(m) {
  if (m(3, 0) != 0.0 || m(3, 1) != 0.0 || m(3, 2) != 0.0 || m(3, 3) != 1.0) {
    throw InvalidArgument("affine matrix bottom row must be (0, 0, 0, 1)");
  }
}

AffineTransform AffineTransform::translation(const Vec3& t) {
  Mat4 m = Mat4::Identity();
  m.topRightCorner<3, 1>() = t;
  return AffineTransform(m);
}

bool AffineTransform::is_rigid(double tol) const {
  const Mat3 r = linear();
  const double ortho = (r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho < tol && std::abs(r.determinant() - 1.0) <= tol;
}

Mat3 euler_to_rotation(const RigidParams& params) {
  if (!params.is_finite()) throw InvalidArgument("rigid parameters must be finite");
  return rot_z(params.alpha_z * kDegToRad) * rot_y(params.alpha_y * kDegToRad) *
         rot_x(params.alpha_x * kDegToRad);
}

std::array<Mat3, 3> euler_rotation_jacobian(const RigidParams& params) {
  if (!params.is_finite()) throw InvalidArgument("rigid parameters must be finite");
  const double ax = params.alpha_x * kDegToRad;
  const double ay = params.alpha_y * kDegToRad;
  const double az = params.alpha_z * kDegToRad;
  const Mat3 rx = rot_x(ax), ry = rot_y(ay), rz = rot_z(az);
  return {Mat3(rz * ry * d_rot_x(ax) * kDegToRad), Mat3(rz * d_rot_y(ay) * rx * kDegToRad),
          Mat3(d_rot_z(az) * ry * rx * kDegToRad)};
}

AffineTransform compose_affine(const RigidParams& params, const VolumeGeometry& geom) {
  geom.validate();
  const Mat3 r = euler_to_rotation(params);
  const Vec3& c = geom.rotation_center;
  const Vec3 t(params.t_x, params.t_y, params.t_z);
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = c - r * c + t;
  return AffineTransform(m);
}

Grid3D make_grid(const VolumeGeometry& geom) {
  geom.validate();
  Grid3D grid{geom, {}};
  grid.points.reserve(geom.voxel_count());
  for (int k = 0; k < geom.depth(); ++k) {
    for (int j = 0; j < geom.height(); ++j) {
      for (int i = 0; i < geom.width(); ++i) {
        grid.points.push_back(geom.index_to_physical(Vec3(i, j, k)));
      }
    }
  }
  return grid;
}

Grid3D transform_grid(const AffineTransform& transform, const Grid3D& grid) {
  Grid3D out{grid.geometry, {}};
  out.points.reserve(grid.points.size());
  const Mat3 r = transform.linear();
  const Vec3 t = transform.offset();
  for (const Vec3& p : grid.points) out.points.push_back(r * p + t);
  return out;
}

double sample_trilinear(const Volume& vol, const Vec3& ijk) {
  const auto& g = vol.geometry;
  const double fi = std::floor(ijk.x()), fj = std::floor(ijk.y()), fk = std::floor(ijk.z());
  if (!std::isfinite(fi) || !std::isfinite(fj) || !std::isfinite(fk)) return 0.0;
  const int i0 = static_cast<int>(fi), j0 = static_cast<int>(fj), k0 = static_cast<int>(fk);
  if (i0 < -1 || j0 < -1 || k0 < -1 || i0 >= g.width() || j0 >= g.height() ||
      k0 >= g.depth()) {
    return 0.0;
  }
  const double wx[2] = {1.0 - (ijk.x() - fi), ijk.x() - fi};
  const double wy[2] = {1.0 - (ijk.y() - fj), ijk.y() - fj};
  const double wz[2] = {1.0 - (ijk.z() - fk), ijk.z() - fk};
  double acc = 0.0;
  for (int dk = 0; dk < 2; ++dk) {
    const int k = k0 + dk;
    if (k < 0 || k >= g.depth() || wz[dk] == 0.0) continue;
    for (int dj = 0; dj < 2; ++dj) {
      const int j = j0 + dj;
      if (j < 0 || j >= g.height() || wy[dj] == 0.0) continue;
      for (int di = 0; di < 2; ++di) {
        const int i = i0 + di;
        if (i < 0 || i >= g.width() || wx[di] == 0.0) continue;
        acc += wz[dk] * wy[dj] * wx[di] * vol.at(k, j, i);
      }
    }
  }
  return acc;
}

namespace {

constexpr double kSplinePole = -0.2679491924311227;  // sqrt(3) - 2

// In-place cubic B-spline prefilter of n samples spaced by `stride`.
void prefilter_line(double* c, int n, std::ptrdiff_t stride) {
  if (n < 2) return;
  const double z = kSplinePole;
  auto at = [&](int i) -> double& { return c[i * stride]; };
  for (int i = 0; i < n; ++i) at(i) *= 6.0;
  // exact start for the mirrored signal: sum of z^|k| over one period
  double zn = z, sum = at(0);
  const double z2n = std::pow(z, 2 * n - 2);
  double zback = z2n / z;
  for (int i = 1; i < n - 1; ++i) {
    sum += (zn + zback) * at(i);
    zn *= z;
    zback /= z;
  }
  sum += zn * at(n - 1);
  sum /= 1.0 - z2n;
  at(0) = sum;
  for (int i = 1; i < n; ++i) at(i) += z * at(i - 1);
  at(n - 1) = z / (z * z - 1.0) * (at(n - 1) + z * at(n - 2));
  for (int i = n - 2; i >= 0; --i) at(i) = z * (at(i + 1) - at(i));
}

std::vector<double> spline_coefficients(const Volume& vol) {
  const int d = vol.geometry.depth(), h = vol.geometry.height(), w = vol.geometry.width();
  std::vector<double> c(vol.data.begin(), vol.data.end());
  const std::ptrdiff_t sw = 1, sh = w, sd = static_cast<std::ptrdiff_t>(w) * h;
  for (int k = 0; k < d; ++k)
    for (int j = 0; j < h; ++j) prefilter_line(c.data() + k * sd + j * sh, w, sw);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < w; ++i) prefilter_line(c.data() + k * sd + i, h, sh);
  for (int j = 0; j < h; ++j)
    for (int i = 0; i < w; ++i) prefilter_line(c.data() + j * sh + i, d, sd);
  return c;
}

int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = std::abs(i) % period;
  return i < n ? i : period - i;
}

void spline_weights(double t, double w[4]) {
  const double u = 1.0 - t;
  w[0] = u * u * u / 6.0;
  w[1] = (4.0 - 6.0 * t * t + 3.0 * t * t * t) / 6.0;
  w[2] = (4.0 - 6.0 * u * u + 3.0 * u * u * u) / 6.0;
  w[3] = t * t * t / 6.0;
}

double sample_spline(const std::vector<double>& c, const VolumeGeometry& g, const Vec3& ijk) {
  const int n[3] = {g.width(), g.height(), g.depth()};
  int idx[3][4];
  double w[3][4];
  for (int a = 0; a < 3; ++a) {
    const double x = ijk[a];
    if (!(x > -0.5 && x < n[a] - 0.5)) return 0.0;
    const double f = std::floor(x);
    spline_weights(x - f, w[a]);
    for (int t = 0; t < 4; ++t) idx[a][t] = mirror(static_cast<int>(f) - 1 + t, n[a]);
  }
  double acc = 0.0;
  for (int tk = 0; tk < 4; ++tk) {
    for (int tj = 0; tj < 4; ++tj) {
      const double wkj = w[2][tk] * w[1][tj];
      const std::size_t row = (static_cast<std::size_t>(idx[2][tk]) * n[1] + idx[1][tj]) * n[0];
      for (int ti = 0; ti < 4; ++ti) acc += wkj * w[0][ti] * c[row + idx[0][ti]];
    }
  }
  return acc;
}

}  // namespace

Volume resample(const Volume& vol, const AffineTransform& transform, Interpolation interpolation) {
  const auto& g = vol.geometry;
  g.validate();
  std::vector<double> coeffs;
  if (interpolation == Interpolation::CubicBSpline) coeffs = spline_coefficients(vol);
  const AffineTransform inv = invert(transform);
  // Index-space form of T^-1: idx' = A (idx - m) + b + m.
  const Mat3 a = inv.linear();
  const Vec3 b = (inv.linear() * g.rotation_center + inv.offset() - g.rotation_center) / g.spacing;
  const Vec3 m = half_extent(g);

  Volume out = vol;
  for (int k = 0; k < g.depth(); ++k) {
    for (int j = 0; j < g.height(); ++j) {
      for (int i = 0; i < g.width(); ++i) {
        const Vec3 src = a * (Vec3(i, j, k) - m) + b + m;
        out.at(k, j, i) = static_cast<float>(interpolation == Interpolation::Linear
                                                 ? sample_trilinear(vol, src)
                                                 : sample_spline(coeffs, g, src));
      }
    }
  }
  return out;
}

double grid_distance(const AffineTransform& a, const AffineTransform& b, const Grid3D& grid) {
  if (grid.points.empty()) return 0.0;
  const Mat3 dl = a.linear() - b.linear();
  const Vec3 dof = a.offset() - b.offset();
  double sum = 0.0;
  for (const Vec3& p : grid.points) sum += (dl * p + dof).norm();
  return sum / static_cast<double>(grid.points.size());
}

double grid_distance(const AffineTransform& a, const AffineTransform& b,
                     const VolumeGeometry& geom) {
  return grid_distance(a, b, make_grid(geom));
}

AffineTransform invert(const AffineTransform& transform) {
  if (transform.is_rigid(1e-9)) {
    const Mat3 rt = transform.linear().transpose();
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rt;
    m.topRightCorner<3, 1>() = -rt * transform.offset();
    return AffineTransform(m);
  }
  const Mat3 l = transform.linear();
  Eigen::FullPivLU<Mat3> lu(l);
  if (!lu.isInvertible() || std::abs(l.determinant()) < 1e-12) {
    throw NumericError("affine transform is not invertible");
  }
  const Mat3 li = lu.inverse();
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = li;
  m.topRightCorner<3, 1>() = -li * transform.offset();
  return AffineTransform(m);
}

}  // namespace sasvr
