#pragma once

#include <memory>
#include <vector>

#include "sasvr/nn/layers.hpp"

namespace sasvr::nn {

// Multi-head self-attention over [N * S, E] rows, S tokens per sample.
// Packed input projection [3E, E] (query, key, value) and output projection [E, E].
template <typename T>
class MultiHeadAttention : public Module<T> {
 public:
  MultiHeadAttention(int embed_dim, int heads, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, int seq_len, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  int embed_dim() const { return embed_; }
  int heads() const { return heads_; }
  Linear<T>& in_proj() { return in_proj_; }
  Linear<T>& out_proj() { return out_proj_; }

 private:
  int embed_;
  int heads_;
  int head_dim_;
  int seq_len_ = 0;
  Linear<T> in_proj_;
  Linear<T> out_proj_;
  Tensor<T> qkv_;
  Tensor<T> attn_;  // [N, heads, S, S]
};

// Post-norm encoder layer: x = LN1(x + MHA(x)); x = LN2(x + FFN(x)), ReLU FFN.
template <typename T>
class TransformerEncoderLayer : public Module<T> {
 public:
  TransformerEncoderLayer(int embed_dim, int heads, int ffn_dim, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, int seq_len, Mode mode);
  Tensor<T> backward(const Tensor<T>& dy);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  MultiHeadAttention<T>& attention() { return attn_; }
  LayerNorm<T>& norm1() { return norm1_; }
  LayerNorm<T>& norm2() { return norm2_; }
  Linear<T>& ffn1() { return ffn1_; }
  Linear<T>& ffn2() { return ffn2_; }

 private:
  MultiHeadAttention<T> attn_;
  LayerNorm<T> norm1_;
  Linear<T> ffn1_;
  Linear<T> ffn2_;
  LayerNorm<T> norm2_;
  Tensor<T> hidden_;  // post-ReLU FFN activations
};

enum class TokenMode { Slice, Row };

struct ScorerOptions {
  int slices = 6;
  int height = 32;
  int width = 32;
  int hidden_dim = 64;
  int heads = 4;
  int layers = 2;
  int ffn_dim = 256;
  TokenMode tokens = TokenMode::Slice;

  int seq_len() const { return tokens == TokenMode::Slice ? slices : slices * height; }
  int token_dim() const { return tokens == TokenMode::Slice ? height * width : width; }
};

// Self-attention slice scorer: the stack is cut into tokens (whole slices or
// slice rows), embedded, passed through the encoder layers, projected back to
// pixel space and squashed by a logistic into per-pixel scores in (0, 1).
template <typename T>
class SliceScorer : public Module<T> {
 public:
  SliceScorer(const ScorerOptions& options, Rng& rng);

  // stack [N, K, H, W] -> scores [N, K, H, W]
  Tensor<T> forward(const Tensor<T>& stack, Mode mode);
  // d scores -> accumulates parameter gradients (inputs are data, no input grad).
  void backward(const Tensor<T>& dscores);
  void collect(const std::string& prefix, ParameterSet<T>& set) override;

  const ScorerOptions& options() const { return opt_; }
  Linear<T>& embed() { return embed_; }
  Parameter<T>& positional() { return pos_; }
  TransformerEncoderLayer<T>& layer(int i) { return *layers_[static_cast<std::size_t>(i)]; }
  Linear<T>& output() { return out_; }

 private:
  ScorerOptions opt_;
  Linear<T> embed_;
  Parameter<T> pos_;  // [S, E]
  std::vector<std::unique_ptr<TransformerEncoderLayer<T>>> layers_;
  Linear<T> out_;
  Tensor<T> scores_;
};

}  // namespace sasvr::nn
