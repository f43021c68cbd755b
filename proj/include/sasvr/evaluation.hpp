#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sasvr/acquisition.hpp"
#include "sasvr/network.hpp"

namespace sasvr {

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual std::vector<RigidParams> predict(const std::vector<const SamplePair*>& pairs) = 0;
  RigidParams predict_one(const SamplePair& pair) { return predict({&pair}).front(); }
};

// Runs the network in evaluation mode, `batch_size` pairs per forward pass.
class NetworkPredictor : public Predictor {
 public:
  explicit NetworkPredictor(SaSvrNet<float>& model, std::string name = "model",
                            int batch_size = 8)
      : model_(model), name_(std::move(name)), batch_size_(batch_size) {}
  std::string name() const override { return name_; }
  std::vector<RigidParams> predict(const std::vector<const SamplePair*>& pairs) override;

 private:
  SaSvrNet<float>& model_;
  std::string name_;
  int batch_size_;
};

// Returns the ground truth.
class OraclePredictor : public Predictor {
 public:
  std::string name() const override { return "oracle"; }
  std::vector<RigidParams> predict(const std::vector<const SamplePair*>& pairs) override;
};

// Always predicts zero motion.
class IdentityPredictor : public Predictor {
 public:
  std::string name() const override { return "identity"; }
  std::vector<RigidParams> predict(const std::vector<const SamplePair*>& pairs) override;
};

struct PairMetrics {
  std::string pair_id;
  RigidParams predicted;
  double d_init = 0.0;   // mm
  double d_reg = 0.0;    // mm
  double e_rot = 0.0;    // deg, root of the mean squared angle error
  double e_tr = 0.0;     // mm, root of the mean squared translation error
  double mse_rot = 0.0;  // deg^2
  double mse_tr = 0.0;   // mm^2
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(const std::vector<double>& values);

struct EvalReport {
  std::string model_id;
  std::string dataset_id;
  std::vector<PairMetrics> rows;
  MeanStd d_init, d_reg, e_rot, e_tr, mse_rot, mse_tr;

  void aggregate();
  void write_pairs_csv(const std::filesystem::path& path) const;
  // One row in the layout of the accuracy table: model, then mean and std per metric.
  void write_summary_csv(const std::filesystem::path& path) const;
};

PairMetrics pair_metrics(const RigidParams& predicted, const SamplePair& pair, const Grid3D& grid);

EvalReport evaluate(Predictor& predictor, const std::vector<SamplePair>& pairs,
                    const std::string& model_id, const std::string& dataset_id);

struct RuntimeStats {
  int repetitions = 0;
  std::size_t pairs = 0;
  double median_seconds = 0.0;  // per pair, per forward pass
  double mean_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  std::vector<double> samples;
};

// Times one forward pass per pair for `repetitions` rounds and drops the
// first round. Throws InvalidArgument for repetitions < 2 or no pairs.
RuntimeStats benchmark_runtime(Predictor& predictor, const std::vector<SamplePair>& pairs,
                               int repetitions);

template <typename T>
std::size_t count_parameters(SaSvrNet<T>& model) {
  return model.parameter_count();
}

struct RoiBox {
  std::array<int, 3> lo{};  // inclusive (i, j, k) = (column, row, depth)
  std::array<int, 3> hi{};  // exclusive
  int voxel_count() const { return (hi[0] - lo[0]) * (hi[1] - lo[1]) * (hi[2] - lo[2]); }
};

struct VoxelSeries {
  int roi = 0;
  std::array<int, 3> ijk{};
  bool interior = false;  // at least 2 voxels from the volume border
  std::vector<double> motion_free;
  std::vector<double> before;  // BR
  std::vector<double> after;   // AR
};

struct TimeSeriesStudy {
  std::vector<RoiBox> rois;
  std::vector<RigidParams> motion;     // per time point
  std::vector<RigidParams> predicted;  // per time point
  std::vector<VoxelSeries> voxels;

  // Fraction of voxels whose temporal variance after registration is below
  // that before registration.
  double variance_reduced_fraction() const;
  // Largest |AR - motion-free| over interior voxels and time points.
  double max_interior_error() const;
  void write_csv(const std::filesystem::path& path) const;
  void write_summary_csv(const std::filesystem::path& path) const;
  // One SVG per ROI with three lines per plotted voxel.
  void write_plots(const std::filesystem::path& directory, int voxels_per_roi = 4) const;
};

// Two boxes of the given edge length centred on the strongest gradient
// magnitude peaks of the frame, at least one box apart.
std::vector<RoiBox> select_rois(const Volume& frame, int edge = 3, int count = 2);

// For every frame: draw motion (seeded per time point), warp the frame, take
// the slice stack, predict, and resample the corrupted volume with the
// inverse predicted transform; records ROI intensities for the three series.
TimeSeriesStudy motion_study(const std::vector<Volume>& series, Predictor& predictor,
                             const std::vector<RoiBox>& rois, std::uint64_t seed,
                             const ParamRanges& ranges, const SliceProtocol& protocol,
                             Interpolation interpolation = Interpolation::CubicBSpline);

// Indices of the `count` transforms closest to identity in Frobenius norm,
// ties broken by index, returned in ascending index order.
std::vector<int> select_reference_frames(const std::vector<AffineTransform>& transforms, int count);

}  // namespace sasvr
