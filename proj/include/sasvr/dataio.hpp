#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sasvr/volume.hpp"

namespace sasvr {

struct LoadOptions {
  // Accept non-isotropic voxels and use the x spacing.
  bool allow_anisotropic = false;
};

// Reads NIfTI-1 single-file (.nii) volumes or the raw "SVRV" format; the
// format is detected from the file contents.
Volume load_volume(const std::filesystem::path& path, const LoadOptions& options = {});

// Little-endian float32 NIfTI-1.
void save_nifti(const Volume& vol, const std::filesystem::path& path);

// Raw format: "SVRV", u32 version, u32 D, H, W, u32 dtype (16 = float32),
// f64 spacing, then D*H*W little-endian float32 values.
void save_raw(const Volume& vol, const std::filesystem::path& path);

// Picks the raw format for ".svrv", NIfTI otherwise.
void save_volume(const Volume& vol, const std::filesystem::path& path);

// Global min-max normalization to [0, 1] (constant volumes become zero),
// then symmetric zero padding to target_shape with the odd voxel trailing.
Volume preprocess(const Volume& vol, const std::array<int, 3>& target_shape);

struct SplitRatios {
  double train = 0.64;
  double test = 0.20;
  double val = 0.16;
};

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> val;
  SplitRatios ratios;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

// Seeded shuffle, then floor(count * ratio) per split with the remainder
// handed out by largest fractional part (ties: train, test, val).
SplitManifest split_subjects(std::vector<std::string> ids, const SplitRatios& ratios,
                             std::uint64_t seed);

// Synthetic head-like volume: a rounded envelope with internal structures
// whose layout is jittered per seed. Values in [0, 1], background exactly 0.
Volume make_phantom(const std::array<int, 3>& shape, std::uint64_t seed, double spacing = 2.4);

// Frames of one phantom subject with a slow multiplicative intensity drift.
std::vector<Volume> make_phantom_series(const std::array<int, 3>& shape, std::uint64_t seed,
                                        int frames, double spacing = 2.4);

}  // namespace sasvr
