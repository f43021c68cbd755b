#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sasvr/acquisition.hpp"
#include "sasvr/network.hpp"

namespace sasvr {

struct LossBreakdown {
  double total = 0.0;
  double l_sim = 0.0;  // mm
  double l_ang = 0.0;  // deg^2
  double l_tr = 0.0;   // mm^2
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

// L = l_sim + lambda1 * l_ang + lambda2 * l_tr, with l_sim the mean per-point
// distance between T_gt(x) and T_pred(x) over the grid. When `grad` is given
// it receives dL/dpred in the order of RigidParams::to_array.
LossBreakdown loss(const RigidParams& pred, const RigidParams& gt, const Grid3D& grid,
                   double lambda1, double lambda2, std::array<double, 6>* grad = nullptr);

struct TrainConfig {
  double lambda1 = 10.0;
  double lambda2 = 100.0;
  double learning_rate = 5e-4;
  int batch_size = 8;
  int steps = 300;
  // Validation period in steps; 0 means once per epoch.
  int eval_every = 0;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  ModelConfig model;

  void validate() const;
};

struct StepRecord {
  int step = 0;  // 1-based optimizer step
  LossBreakdown loss;  // batch mean before the update
  std::optional<double> val_d_reg;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::optional<double> initial_val_d_reg;
  double wall_clock_seconds = 0.0;

  // step,total,l_sim,l_ang,l_tr,val_D_reg; row 0 holds the initial validation.
  void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
  std::unique_ptr<SaSvrNet<float>> model;  // best-validation weights
  TrainHistory history;
  int best_step = 0;
  double best_val_d_reg = 0.0;
};

class Adam {
 public:
  Adam(nn::ParameterSet<float>& params, double lr, double beta1, double beta2, double eps);
  void step();
  int steps_taken() const { return t_; }

 private:
  nn::ParameterSet<float>& params_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Stacks pairs into network inputs: [N, K, H, W] and [N, D, H, W].
nn::Tensor<float> batch_stacks(const std::vector<const SamplePair*>& pairs);
nn::Tensor<float> batch_volumes(const std::vector<const SamplePair*>& pairs);

// One training step on the given pairs; returns the batch-mean loss measured before the update.
LossBreakdown train_step(SaSvrNet<float>& model, Adam& optimizer,
                         const std::vector<const SamplePair*>& batch, const Grid3D& grid,
                         double lambda1, double lambda2);

// Mean D_reg of the model over the pairs (evaluation mode).
double mean_d_reg(SaSvrNet<float>& model, const std::vector<SamplePair>& pairs,
                  const Grid3D& grid);

using ProgressFn = std::function<void(const StepRecord&)>;

// Throws NumericError when the loss becomes non-finite.
TrainResult train(const TrainConfig& config, const std::vector<SamplePair>& train_set,
                  const std::vector<SamplePair>& val_set, const ProgressFn& progress = {});

struct SweepRow {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double d_reg = 0.0;  // validation means
  double e_rot = 0.0;
  double e_tr = 0.0;
  bool selected = false;
};

std::vector<std::pair<double, double>> default_lambda_grid();

// Trains one model per (lambda1, lambda2) cell and marks the cell minimizing
// E_rot / min E_rot + E_tr / min E_tr.
std::vector<SweepRow> sweep_lambdas(const std::vector<std::pair<double, double>>& grid,
                                    const TrainConfig& config,
                                    const std::vector<SamplePair>& train_set,
                                    const std::vector<SamplePair>& val_set);

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace sasvr
