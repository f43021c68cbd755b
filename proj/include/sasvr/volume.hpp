#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace sasvr {

using Vec3 = Eigen::Vector3d;

// Voxel layout is (depth, row, column) with the column index fastest.
// Physical axes: x follows columns, y follows rows, z follows depth (slices).
struct VolumeGeometry {
  std::array<int, 3> shape{1, 1, 1};  // D, H, W
  double spacing = 2.4;                // mm, isotropic
  Vec3 rotation_center = Vec3::Zero();  // mm; the grid is centred on it

  int depth() const { return shape[0]; }
  int height() const { return shape[1]; }
  int width() const { return shape[2]; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
  }

  // Throws InvalidArgument when a dimension is < 1 or the spacing is not positive.
  void validate() const;

  // Continuous voxel index (i, j, k) = (column, row, depth) to physical mm.
  Vec3 index_to_physical(const Vec3& ijk) const;
  Vec3 physical_to_index(const Vec3& p) const;

  bool operator==(const VolumeGeometry& o) const {
    return shape == o.shape && spacing == o.spacing && rotation_center == o.rotation_center;
  }
};

struct Volume {
  VolumeGeometry geometry;
  std::vector<float> data;
  std::string subject_id;
  int time_index = 0;

  Volume() = default;
  explicit Volume(VolumeGeometry geom, float fill = 0.0F);

  std::size_t index(int k, int j, int i) const {
    return (static_cast<std::size_t>(k) * geometry.shape[1] + j) * geometry.shape[2] + i;
  }
  float& at(int k, int j, int i) { return data[index(k, j, i)]; }
  float at(int k, int j, int i) const { return data[index(k, j, i)]; }
};

}  // namespace sasvr
