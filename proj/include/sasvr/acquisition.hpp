#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "sasvr/geometry.hpp"
#include "sasvr/volume.hpp"

namespace sasvr {

// Symmetric half-widths a: each parameter is drawn from U(-a, a).
struct ParamRanges {
  double alpha_x = 5.0;  // deg
  double alpha_y = 5.0;
  double alpha_z = 5.0;
  double t_x = 12.0;  // mm
  double t_y = 12.0;
  double t_z = 8.4;

  static ParamRanges zero() { return {0, 0, 0, 0, 0, 0}; }
  void validate() const;
};

// Simultaneous multi-slice acquisition: `slices_per_shot` planes spaced
// total_slices / slices_per_shot apart. A negative shot index means "draw one".
struct SliceProtocol {
  int slices_per_shot = 6;
  int total_slices = 60;
  int shot = -1;

  int shot_count() const { return total_slices / slices_per_shot; }
  void validate() const;
};

struct SliceStack {
  int slices = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;  // slices x height x width
  std::vector<int> indices;
  VolumeGeometry geometry;  // of the volume the slices were taken from

  const float* slice(int k) const {
    return data.data() + static_cast<std::size_t>(k) * height * width;
  }
};

struct SamplePair {
  std::string pair_id;
  std::string reference_id;
  std::uint64_t seed = 0;
  int shot = 0;
  SliceStack stack;
  std::shared_ptr<const Volume> reference;
  RigidParams params;
  double d_init = 0.0;  // mm
};

// Each component drawn independently from U(-a, a); deterministic in the seed.
RigidParams sample_rigid_params(std::uint64_t seed, const ParamRanges& ranges);

// 0-based shot i: (i, i + n/K, ..., i + (K-1) n/K). Throws InvalidArgument
// unless K divides n and 0 <= i < n/K.
std::vector<int> slice_indices(int total_slices, int shot, int slices_per_shot);

// Axial planes copied verbatim. Throws InvalidArgument for out-of-range indices.
SliceStack extract_stack(const Volume& vol, const std::vector<int>& indices);

// Samples params (and the shot, if not fixed), warps the reference with
// T_gt, extracts the stack from the warped volume and caches D_init.
SamplePair synthesize_pair(std::shared_ptr<const Volume> reference, std::uint64_t seed,
                           const ParamRanges& ranges, const SliceProtocol& protocol);

// Split-scoped reference sets; each set must come from disjoint subjects.
struct SplitReferences {
  std::vector<std::shared_ptr<const Volume>> train;
  std::vector<std::shared_ptr<const Volume>> val;
  std::vector<std::shared_ptr<const Volume>> test;
};

struct SplitCounts {
  int train = 2000;
  int val = 500;
  int test = 200;
};

struct ManifestEntry {
  std::string pair_id;
  std::string split;
  std::string reference_id;
  std::uint64_t seed = 0;
  int shot = 0;
  RigidParams params;
  std::vector<int> slice_indices;
  double d_init = 0.0;
};

struct Dataset {
  std::vector<SamplePair> train;
  std::vector<SamplePair> val;
  std::vector<SamplePair> test;
};

// Pair p of split s uses seed derive_seed(seed, s, p); the reference is
// drawn from that split's set with the same seed.
Dataset build_dataset(const SplitReferences& references, const SplitCounts& counts,
                      std::uint64_t seed, const ParamRanges& ranges, const SliceProtocol& protocol);

ManifestEntry manifest_entry(const SamplePair& pair, const std::string& split);

// Recreates a pair from its manifest entry and reference volume.
SamplePair regenerate_pair(const ManifestEntry& entry, std::shared_ptr<const Volume> reference,
                           const SliceProtocol& protocol);

// D_init of the identity prediction against the pair's ground truth.
double initial_distance(const RigidParams& params, const VolumeGeometry& geom);

}  // namespace sasvr
