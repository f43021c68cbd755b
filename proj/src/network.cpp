#include "sasvr/network.hpp"

#include <map>

#include "sasvr/error.hpp"
#include "sasvr/random.hpp"

namespace sasvr {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.preset = "paper";
  c.depth = 70;
  c.height = 100;
  c.width = 100;
  c.stage_widths = {16, 32, 64, 128};
  c.hidden_dim = 256;
  c.heads = 8;
  c.ffn_dim = 2048;
  c.transformer_layers = 3;
  c.regressor_width = 288;
  c.regressor_out = 608;
  return c;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw InvalidArgument("unknown preset '" + name + "' (expected desk or paper)");
}

void ModelConfig::validate() const {
  if (slices < 1 || depth < 1 || height < 1 || width < 1) {
    throw InvalidArgument("model input sizes must be >= 1");
  }
  for (int w : stage_widths) {
    if (w < 1) throw InvalidArgument("stage widths must be >= 1");
  }
  if (with_attention) {
    if (heads < 1 || hidden_dim % heads != 0) {
      throw InvalidArgument("hidden_dim must be divisible by heads");
    }
    if (transformer_layers < 0 || ffn_dim < 1) throw InvalidArgument("bad transformer settings");
  }
  if (cardinality < 1 || regressor_width % cardinality != 0 || regressor_out < 1) {
    throw InvalidArgument("regressor width must be divisible by cardinality");
  }
}

nn::ScorerOptions ModelConfig::scorer_options() const {
  return {slices, height, width, hidden_dim, heads, transformer_layers, ffn_dim, tokens};
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"preset", c.preset},
                     {"slices", c.slices},
                     {"depth", c.depth},
                     {"height", c.height},
                     {"width", c.width},
                     {"stage_widths", c.stage_widths},
                     {"with_attention", c.with_attention},
                     {"hidden_dim", c.hidden_dim},
                     {"heads", c.heads},
                     {"transformer_layers", c.transformer_layers},
                     {"ffn_dim", c.ffn_dim},
                     {"tokens", c.tokens == nn::TokenMode::Slice ? "slice" : "row"},
                     {"regressor_width", c.regressor_width},
                     {"regressor_out", c.regressor_out},
                     {"cardinality", c.cardinality}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("preset").get_to(c.preset);
  j.at("slices").get_to(c.slices);
  j.at("depth").get_to(c.depth);
  j.at("height").get_to(c.height);
  j.at("width").get_to(c.width);
  j.at("stage_widths").get_to(c.stage_widths);
  j.at("with_attention").get_to(c.with_attention);
  j.at("hidden_dim").get_to(c.hidden_dim);
  j.at("heads").get_to(c.heads);
  j.at("transformer_layers").get_to(c.transformer_layers);
  j.at("ffn_dim").get_to(c.ffn_dim);
  const auto tokens = j.at("tokens").get<std::string>();
  if (tokens != "slice" && tokens != "row") throw InvalidArgument("tokens must be slice or row");
  c.tokens = tokens == "slice" ? nn::TokenMode::Slice : nn::TokenMode::Row;
  j.at("regressor_width").get_to(c.regressor_width);
  j.at("regressor_out").get_to(c.regressor_out);
  j.at("cardinality").get_to(c.cardinality);
}

namespace {
enum Stream : std::uint64_t { kScorer = 11, kSliceEncoder = 12, kVolumeEncoder = 13, kRegressor = 14 };
}

template <typename T>
SaSvrNet<T>::SaSvrNet(const ModelConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed) {
  config_.validate();
  if (config_.with_attention) {
    Rng rng(derive_seed(seed, kScorer));
    scorer_ = std::make_unique<nn::SliceScorer<T>>(config_.scorer_options(), rng);
  }
  {
    Rng rng(derive_seed(seed, kSliceEncoder));
    slice_encoder_ = std::make_unique<nn::SliceEncoder<T>>(config_.slices, config_.depth,
                                                           config_.stage_widths, rng);
  }
  {
    Rng rng(derive_seed(seed, kVolumeEncoder));
    volume_encoder_ = std::make_unique<nn::ResNet10Encoder<T>>(1, config_.stage_widths, rng);
  }
  {
    Rng rng(derive_seed(seed, kRegressor));
    regressor_ = std::make_unique<nn::Regressor<T>>(2 * config_.stage_widths[3],
                                                    config_.regressor_width, config_.regressor_out,
                                                    config_.cardinality, rng);
  }
  if (scorer_) scorer_->collect("scorer.", params_);
  slice_encoder_->collect("slice_encoder.", params_);
  volume_encoder_->collect("volume_encoder.", params_);
  regressor_->collect("regressor.", params_);
}

template <typename T>
Prediction<T> SaSvrNet<T>::forward(const nn::Tensor<T>& stack, const nn::Tensor<T>& volume,
                                   nn::Mode mode) {
  const auto& c = config_;
  if (stack.rank() != 4 || stack.dim(1) != c.slices || stack.dim(2) != c.height ||
      stack.dim(3) != c.width) {
    throw InvalidArgument("stack shape " + nn::shape_string(stack.shape()) +
                          " does not match the model configuration");
  }
  if (volume.rank() != 4 || volume.dim(0) != stack.dim(0) || volume.dim(1) != c.depth ||
      volume.dim(2) != c.height || volume.dim(3) != c.width) {
    throw InvalidArgument("volume shape " + nn::shape_string(volume.shape()) +
                          " does not match the model configuration");
  }
  const int n = stack.dim(0);
  Prediction<T> out;
  nn::Tensor<T> weighted = stack;
  if (scorer_) {
    out.scores = scorer_->forward(stack, mode);
    for (std::size_t i = 0; i < weighted.size(); ++i) weighted[i] *= out.scores[i];
  }
  const nn::Tensor<T> fs = slice_encoder_->forward(weighted, mode);
  const nn::Tensor<T> fv =
      volume_encoder_->forward(volume.reshaped({n, 1, c.depth, c.height, c.width}), mode);

  // channel concatenation
  const std::size_t per = fs.inner_size(1);
  std::vector<int> fused_shape = fs.shape();
  fused_shape[1] *= 2;
  nn::Tensor<T> fused(fused_shape);
  for (int b = 0; b < n; ++b) {
    std::copy_n(fs.data() + b * per, per, fused.data() + 2 * b * per);
    std::copy_n(fv.data() + b * per, per, fused.data() + (2 * b + 1) * per);
  }
  out.params = regressor_->forward(fused, mode);
  if (mode == nn::Mode::Train) {
    stack_ = stack;
    feature_shape_ = fs.shape();
  }
  return out;
}

template <typename T>
void SaSvrNet<T>::backward(const nn::Tensor<T>& dparams) {
  if (stack_.empty()) throw InvalidArgument("backward without a training forward");
  const nn::Tensor<T> dfused = regressor_->backward(dparams);
  const int n = feature_shape_[0];
  nn::Tensor<T> ds(feature_shape_), dv(feature_shape_);
  const std::size_t per = ds.inner_size(1);
  for (int b = 0; b < n; ++b) {
    std::copy_n(dfused.data() + 2 * b * per, per, ds.data() + b * per);
    std::copy_n(dfused.data() + (2 * b + 1) * per, per, dv.data() + b * per);
  }
  volume_encoder_->backward(dv, false);
  const nn::Tensor<T> dweighted = slice_encoder_->backward(ds, scorer_ != nullptr);
  if (scorer_) {
    nn::Tensor<T> dscores(stack_.shape());
    for (std::size_t i = 0; i < dscores.size(); ++i) dscores[i] = dweighted[i] * stack_[i];
    scorer_->backward(dscores);
  }
}

template <typename From, typename To>
void copy_state(SaSvrNet<From>& from, SaSvrNet<To>& to) {
  std::map<std::string, const nn::Tensor<From>*> src;
  for (auto& [name, p] : from.parameters().params) src[name] = &p->value;
  for (auto& [name, b] : from.parameters().buffers) src[name] = b;
  auto copy_one = [&](const std::string& name, nn::Tensor<To>& dst) {
    const auto it = src.find(name);
    if (it == src.end()) return;
    if (it->second->shape() != dst.shape()) {
      throw InvalidArgument("shape mismatch copying " + name);
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<To>((*it->second)[i]);
  };
  for (auto& [name, p] : to.parameters().params) copy_one(name, p->value);
  for (auto& [name, b] : to.parameters().buffers) copy_one(name, *b);
}

template class SaSvrNet<float>;
template class SaSvrNet<double>;
template void copy_state<float, float>(SaSvrNet<float>&, SaSvrNet<float>&);
template void copy_state<float, double>(SaSvrNet<float>&, SaSvrNet<double>&);
template void copy_state<double, float>(SaSvrNet<double>&, SaSvrNet<float>&);
template void copy_state<double, double>(SaSvrNet<double>&, SaSvrNet<double>&);

}  // namespace sasvr
