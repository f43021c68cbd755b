#include "sasvr/nn/attention.hpp"

#include <cmath>

#include "sasvr/error.hpp"

namespace sasvr::nn {

// ---------------------------------------------------------------- MultiHeadAttention

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(int embed_dim, int heads, Rng& rng)
    : embed_(embed_dim),
      heads_(heads),
      head_dim_(heads > 0 ? embed_dim / heads : 0),
      in_proj_(embed_dim, 3 * embed_dim, rng),
      out_proj_(embed_dim, embed_dim, rng) {
  if (heads < 1 || embed_dim % heads != 0) {
    throw InvalidArgument("embedding size must be divisible by the head count");
  }
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& x, int seq_len, Mode mode) {
  if (x.rank() != 2 || x.dim(1) != embed_ || seq_len < 1 || x.dim(0) % seq_len != 0) {
    throw InvalidArgument("attention expects [N * S, E] input");
  }
  const int n_batch = x.dim(0) / seq_len;
  const int s = seq_len, e = embed_, dh = head_dim_;
  Tensor<T> qkv = in_proj_.forward(x, mode);
  Tensor<T> attn({n_batch, heads_, s, s});
  Tensor<T> o({x.dim(0), e});
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (int n = 0; n < n_batch; ++n) {
    ConstMatMap<T> qkv_n(qkv.data() + static_cast<std::size_t>(n) * s * 3 * e, s, 3 * e);
    MatMap<T> o_n(o.data() + static_cast<std::size_t>(n) * s * e, s, e);
    for (int h = 0; h < heads_; ++h) {
      MatMap<T> a(attn.data() + (static_cast<std::size_t>(n) * heads_ + h) * s * s, s, s);
      a.noalias() = qkv_n.middleCols(h * dh, dh) * qkv_n.middleCols(e + h * dh, dh).transpose();
      a *= scale;
      for (int i = 0; i < s; ++i) {
        const T mx = a.row(i).maxCoeff();
        a.row(i) = (a.row(i).array() - mx).exp();
        a.row(i) /= a.row(i).sum();
      }
      o_n.middleCols(h * dh, dh).noalias() = a * qkv_n.middleCols(2 * e + h * dh, dh);
    }
  }
  if (mode == Mode::Train) {
    seq_len_ = seq_len;
    qkv_ = std::move(qkv);
    attn_ = std::move(attn);
  }
  return out_proj_.forward(o, mode);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::backward(const Tensor<T>& dy) {
  if (attn_.empty()) throw InvalidArgument("attention backward without a training forward");
  const int s = seq_len_, e = embed_, dh = head_dim_;
  const int n_batch = dy.dim(0) / s;
  const Tensor<T> d_o = out_proj_.backward(dy);
  Tensor<T> dqkv({dy.dim(0), 3 * e});
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  RowMatrix<T> da(s, s);
  for (int n = 0; n < n_batch; ++n) {
    ConstMatMap<T> qkv_n(qkv_.data() + static_cast<std::size_t>(n) * s * 3 * e, s, 3 * e);
    ConstMatMap<T> do_n(d_o.data() + static_cast<std::size_t>(n) * s * e, s, e);
    MatMap<T> dqkv_n(dqkv.data() + static_cast<std::size_t>(n) * s * 3 * e, s, 3 * e);
    for (int h = 0; h < heads_; ++h) {
      ConstMatMap<T> a(attn_.data() + (static_cast<std::size_t>(n) * heads_ + h) * s * s, s, s);
      const auto do_h = do_n.middleCols(h * dh, dh);
      da.noalias() = do_h * qkv_n.middleCols(2 * e + h * dh, dh).transpose();
      dqkv_n.middleCols(2 * e + h * dh, dh).noalias() = a.transpose() * do_h;
      // softmax backward, row-wise
      for (int i = 0; i < s; ++i) {
        const T dot = (da.row(i).array() * a.row(i).array()).sum();
        da.row(i) = a.row(i).array() * (da.row(i).array() - dot);
      }
      da *= scale;
      dqkv_n.middleCols(h * dh, dh).noalias() = da * qkv_n.middleCols(e + h * dh, dh);
      dqkv_n.middleCols(e + h * dh, dh).noalias() = da.transpose() * qkv_n.middleCols(h * dh, dh);
    }
  }
  return in_proj_.backward(dqkv);
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  in_proj_.collect(prefix + "in_proj.", set);
  out_proj_.collect(prefix + "out_proj.", set);
}

// ---------------------------------------------------------------- TransformerEncoderLayer

template <typename T>
TransformerEncoderLayer<T>::TransformerEncoderLayer(int embed_dim, int heads, int ffn_dim,
                                                    Rng& rng)
    : attn_(embed_dim, heads, rng),
      norm1_(embed_dim),
      ffn1_(embed_dim, ffn_dim, rng),
      ffn2_(ffn_dim, embed_dim, rng),
      norm2_(embed_dim) {}

template <typename T>
Tensor<T> TransformerEncoderLayer<T>::forward(const Tensor<T>& x, int seq_len, Mode mode) {
  Tensor<T> r1 = attn_.forward(x, seq_len, mode);
  add_inplace(r1, x);
  const Tensor<T> x1 = norm1_.forward(std::move(r1), mode);
  Tensor<T> h = ffn1_.forward(x1, mode);
  relu_inplace(h);
  Tensor<T> r2 = ffn2_.forward(h, mode);
  add_inplace(r2, x1);
  if (mode == Mode::Train) hidden_ = std::move(h);
  return norm2_.forward(std::move(r2), mode);
}

template <typename T>
Tensor<T> TransformerEncoderLayer<T>::backward(const Tensor<T>& dy) {
  const Tensor<T> dr2 = norm2_.backward(dy);
  Tensor<T> dh = ffn2_.backward(dr2);
  relu_backward_inplace(dh, hidden_);
  Tensor<T> dx1 = ffn1_.backward(dh);
  add_inplace(dx1, dr2);
  const Tensor<T> dr1 = norm1_.backward(dx1);
  Tensor<T> dx = attn_.backward(dr1);
  add_inplace(dx, dr1);
  return dx;
}

template <typename T>
void TransformerEncoderLayer<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  attn_.collect(prefix + "self_attn.", set);
  norm1_.collect(prefix + "norm1.", set);
  ffn1_.collect(prefix + "linear1.", set);
  ffn2_.collect(prefix + "linear2.", set);
  norm2_.collect(prefix + "norm2.", set);
}

// ---------------------------------------------------------------- SliceScorer

template <typename T>
SliceScorer<T>::SliceScorer(const ScorerOptions& options, Rng& rng)
    : opt_(options),
      embed_(options.token_dim(), options.hidden_dim, rng),
      pos_({options.seq_len(), options.hidden_dim}),
      out_(options.hidden_dim, options.token_dim(), rng) {
  if (opt_.layers < 0) throw InvalidArgument("negative transformer layer count");
  for (auto& v : pos_.value.values()) v = static_cast<T>(0.02 * rng.normal());
  for (int i = 0; i < opt_.layers; ++i) {
    layers_.push_back(
        std::make_unique<TransformerEncoderLayer<T>>(opt_.hidden_dim, opt_.heads, opt_.ffn_dim, rng));
  }
}

template <typename T>
Tensor<T> SliceScorer<T>::forward(const Tensor<T>& stack, Mode mode) {
  if (stack.rank() != 4 || stack.dim(1) != opt_.slices || stack.dim(2) != opt_.height ||
      stack.dim(3) != opt_.width) {
    throw InvalidArgument("scorer expects a stack of shape [N, " + std::to_string(opt_.slices) +
                          ", " + std::to_string(opt_.height) + ", " + std::to_string(opt_.width) +
                          "], got " + shape_string(stack.shape()));
  }
  const int n_batch = stack.dim(0);
  const int s = opt_.seq_len(), e = opt_.hidden_dim;
  Tensor<T> h = embed_.forward(stack.reshaped({n_batch * s, opt_.token_dim()}), mode);
  for (int n = 0; n < n_batch; ++n) {
    T* hn = h.data() + static_cast<std::size_t>(n) * s * e;
    for (std::size_t i = 0; i < pos_.value.size(); ++i) hn[i] += pos_.value[i];
  }
  for (auto& layer : layers_) h = layer->forward(h, s, mode);
  Tensor<T> scores = out_.forward(h, mode);
  for (auto& v : scores.values()) v = sigmoid(v);
  scores.reshape(stack.shape());
  if (mode == Mode::Train) scores_ = scores;
  return scores;
}

template <typename T>
void SliceScorer<T>::backward(const Tensor<T>& dscores) {
  if (scores_.empty()) throw InvalidArgument("scorer backward without a training forward");
  const int n_batch = dscores.dim(0);
  const int s = opt_.seq_len(), e = opt_.hidden_dim;
  Tensor<T> dlogits({n_batch * s, opt_.token_dim()});
  for (std::size_t i = 0; i < dlogits.size(); ++i) {
    const T p = scores_[i];
    dlogits[i] = dscores[i] * p * (T(1) - p);
  }
  Tensor<T> dh = out_.backward(dlogits);
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) dh = (*it)->backward(dh);
  for (int n = 0; n < n_batch; ++n) {
    const T* dn = dh.data() + static_cast<std::size_t>(n) * s * e;
    for (std::size_t i = 0; i < pos_.grad.size(); ++i) pos_.grad[i] += dn[i];
  }
  embed_.backward(dh, false);
}

template <typename T>
void SliceScorer<T>::collect(const std::string& prefix, ParameterSet<T>& set) {
  embed_.collect(prefix + "embed.", set);
  set.params.emplace_back(prefix + "pos_embedding", &pos_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect(prefix + "layers." + std::to_string(i) + ".", set);
  }
  out_.collect(prefix + "output.", set);
}

template class MultiHeadAttention<float>;
template class MultiHeadAttention<double>;
template class TransformerEncoderLayer<float>;
template class TransformerEncoderLayer<double>;
template class SliceScorer<float>;
template class SliceScorer<double>;

}  // namespace sasvr::nn
