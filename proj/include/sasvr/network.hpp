#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "sasvr/nn/attention.hpp"
#include "sasvr/nn/blocks.hpp"

namespace sasvr {

struct ModelConfig {
  std::string preset = "desk";
  int slices = 6;  // K
  int depth = 24;  // D, canonical volume depth
  int height = 32;
  int width = 32;
  std::array<int, 4> stage_widths{16, 32, 64, 128};
  bool with_attention = true;
  int hidden_dim = 64;
  int heads = 4;
  int transformer_layers = 2;
  int ffn_dim = 256;
  nn::TokenMode tokens = nn::TokenMode::Slice;
  int regressor_width = 64;
  int regressor_out = 128;
  int cardinality = 32;

  static ModelConfig desk();
  static ModelConfig paper();
  static ModelConfig from_preset(const std::string& name);

  // Throws InvalidArgument on inconsistent settings.
  void validate() const;
  nn::ScorerOptions scorer_options() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct Prediction {
  nn::Tensor<T> params;  // [N, 6]: deg, deg, deg, mm, mm, mm
  nn::Tensor<T> scores;  // [N, K, H, W]; empty without attention
};

// Scorer -> weighted slices -> slice encoder; volume encoder; channel
// concatenation; ResNeXt regressor. Each component draws its initial weights
// from its own seed stream, so models built from the same seed share encoder
// and regressor weights whether or not attention is enabled.
template <typename T>
class SaSvrNet {
 public:
  SaSvrNet(const ModelConfig& config, std::uint64_t seed);

  // stack [N, K, H, W], volume [N, D, H, W].
  Prediction<T> forward(const nn::Tensor<T>& stack, const nn::Tensor<T>& volume, nn::Mode mode);
  // Gradient of the loss w.r.t. the predicted parameters of the last Train forward.
  void backward(const nn::Tensor<T>& dparams);

  nn::ParameterSet<T>& parameters() { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }
  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  nn::SliceScorer<T>* scorer() { return scorer_.get(); }
  nn::Regressor<T>& regressor() { return *regressor_; }

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  std::unique_ptr<nn::SliceScorer<T>> scorer_;
  std::unique_ptr<nn::SliceEncoder<T>> slice_encoder_;
  std::unique_ptr<nn::ResNet10Encoder<T>> volume_encoder_;
  std::unique_ptr<nn::Regressor<T>> regressor_;
  nn::ParameterSet<T> params_;
  nn::Tensor<T> stack_;
  std::vector<int> feature_shape_;
};

// Copies values (parameters and buffers) between models with equal names and shapes.
template <typename From, typename To>
void copy_state(SaSvrNet<From>& from, SaSvrNet<To>& to);

}  // namespace sasvr
