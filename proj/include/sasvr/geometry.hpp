#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "sasvr/volume.hpp"

namespace sasvr {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

// Rigid parameters, angles in degrees and translations in mm.
struct RigidParams {
  double alpha_x = 0.0;
  double alpha_y = 0.0;
  double alpha_z = 0.0;
  double t_x = 0.0;
  double t_y = 0.0;
  double t_z = 0.0;

  std::array<double, 6> to_array() const { return {alpha_x, alpha_y, alpha_z, t_x, t_y, t_z}; }
  static RigidParams from_array(std::span<const double, 6> v) {
    return {v[0], v[1], v[2], v[3], v[4], v[5]};
  }
  bool is_finite() const;
  bool operator==(const RigidParams&) const = default;
};

class AffineTransform {
 public:
  AffineTransform() : m_(Mat4::Identity()) {}
  // Throws InvalidArgument unless the bottom row is exactly (0, 0, 0, 1).
  explicit AffineTransform(const Mat4& m);

  static AffineTransform identity() { return AffineTransform(); }
  static AffineTransform translation(const Vec3& t);

  const Mat4& matrix() const { return m_; }
  Mat3 linear() const { return m_.topLeftCorner<3, 3>(); }
  Vec3 offset() const { return m_.topRightCorner<3, 1>(); }

  Vec3 apply(const Vec3& x) const { return linear() * x + offset(); }

  // Orthonormal linear block with det +1 within tol.
  bool is_rigid(double tol = 1e-9) const;

  AffineTransform operator*(const AffineTransform& rhs) const {
    return AffineTransform(Mat4(m_ * rhs.m_));
  }

 private:
  Mat4 m_;
};

// Physical coordinates (x, y, z) in mm for every voxel, depth-major order.
struct Grid3D {
  VolumeGeometry geometry;
  std::vector<Vec3> points;
};

// R = Rz(alpha_z) * Ry(alpha_y) * Rx(alpha_x).
Mat3 euler_to_rotation(const RigidParams& params);

// Partial derivatives of euler_to_rotation w.r.t. (alpha_x, alpha_y, alpha_z), per degree.
std::array<Mat3, 3> euler_rotation_jacobian(const RigidParams& params);

// T(x) = R (x - c) + c + t, c being the geometry's rotation centre.
AffineTransform compose_affine(const RigidParams& params, const VolumeGeometry& geom);

Grid3D make_grid(const VolumeGeometry& geom);

Grid3D transform_grid(const AffineTransform& transform, const Grid3D& grid);

enum class Interpolation { Linear, CubicBSpline };

// Pull-back resampling: out(x) = vol(T^-1 x). Samples outside the field of
// view read as zero. The cubic B-spline interpolates the voxel values exactly
// (prefiltered, mirror boundaries).
Volume resample(const Volume& vol, const AffineTransform& transform,
                Interpolation interpolation = Interpolation::Linear);

// Trilinear sample at a continuous voxel index (column, row, depth).
double sample_trilinear(const Volume& vol, const Vec3& ijk);

// Mean Euclidean distance (mm) between T_a(x) and T_b(x) over the grid points.
double grid_distance(const AffineTransform& a, const AffineTransform& b, const Grid3D& grid);

// Same as grid_distance over make_grid(geom).
double grid_distance(const AffineTransform& a, const AffineTransform& b,
                     const VolumeGeometry& geom);

// Throws NumericError for non-invertible matrices.
AffineTransform invert(const AffineTransform& transform);

}  // namespace sasvr
