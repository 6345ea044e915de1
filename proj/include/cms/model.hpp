#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cms/hash.hpp"

namespace cms::model {

struct SequenceTooLong : std::runtime_error {
  explicit SequenceTooLong(const std::string& what) : std::runtime_error(what) {}
};
struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

// GPT-2-like decoder: pre-LN residual blocks, learned absolute positions,
// output projection tied to the token embedding.
struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int context_length = 160;
  int vocab_size = 0;
  double dropout = 0.0;
  int precision_bits = 64;  // 32 or 64

  void validate() const;
};

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
struct LayerParamsT {
  Mat<T> ln1_g, ln1_b;
  Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w_fc, b_fc, w_proj, b_proj;
};

template <class T>
struct ParametersT {
  Mat<T> tok_emb;  // [V, D]; doubles as the tied output projection
  Mat<T> pos_emb;  // [context, D]
  std::vector<LayerParamsT<T>> layers;
  Mat<T> lnf_g, lnf_b;

  template <class Fn>
  void for_each_tensor(Fn&& fn) {
    fn("tok_emb", tok_emb);
    fn("pos_emb", pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      auto& y = layers[l];
      fn(p + "ln1.g", y.ln1_g); fn(p + "ln1.b", y.ln1_b);
      fn(p + "attn.wq", y.wq); fn(p + "attn.bq", y.bq);
      fn(p + "attn.wk", y.wk); fn(p + "attn.bk", y.bk);
      fn(p + "attn.wv", y.wv); fn(p + "attn.bv", y.bv);
      fn(p + "attn.wo", y.wo); fn(p + "attn.bo", y.bo);
      fn(p + "ln2.g", y.ln2_g); fn(p + "ln2.b", y.ln2_b);
      fn(p + "mlp.w_fc", y.w_fc); fn(p + "mlp.b_fc", y.b_fc);
      fn(p + "mlp.w_proj", y.w_proj); fn(p + "mlp.b_proj", y.b_proj);
    }
    fn("lnf.g", lnf_g);
    fn("lnf.b", lnf_b);
  }
  template <class Fn>
  void for_each_tensor(Fn&& fn) const {
    const_cast<ParametersT*>(this)->for_each_tensor(
        [&](const std::string& name, Mat<T>& m) { fn(name, static_cast<const Mat<T>&>(m)); });
  }

  bool all_finite() const;
  std::size_t coordinate_count() const;
};

using Parameters = ParametersT<double>;
using Gradients = ParametersT<double>;

// Weights ~ Normal(0, 0.02), biases 0, layer-norm gains 1; deterministic per seed.
template <class T>
ParametersT<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

template <class T>
ParametersT<T> zeros_like(const ParametersT<T>& params);

// Incremental decoder with a per-layer KV cache. feed() computes exactly the
// operations a from-scratch forward performs for that row, so cached and
// uncached logits agree bit for bit.
template <class T>
class DecodeSession {
 public:
  DecodeSession(const ModelConfig& config, const ParametersT<T>& params);

  // Appends one token and returns the next-token logits row [1, V].
  Mat<T> feed(int token_id);
  int length() const { return len_; }
  void reset() { len_ = 0; }

 private:
  const ModelConfig* config_;
  const ParametersT<T>* params_;
  std::vector<Mat<T>> k_cache_, v_cache_;  // per layer [context, D]
  int len_ = 0;
};

// Decode-path forward: logits [T, V]. Strictly causal, and bit-stable under
// prefix extension or truncation because rows are produced sequentially.
template <class T>
Mat<T> forward(const ModelConfig& config, const ParametersT<T>& params,
               std::span<const int> ids);

// Mean token-level cross-entropy over weight>0 positions.
template <class T>
T loss(const Mat<T>& logits, std::span<const int> targets, std::span<const T> weights);

// Training-path loss (same activations backward() differentiates).
template <class T>
T train_loss(const ModelConfig& config, const ParametersT<T>& params,
             std::span<const int> ids, std::span<const int> targets,
             std::span<const T> weights);

template <class T>
struct BackwardResult {
  T loss = T(0);
  T total_weight = T(0);
  ParametersT<T> grads;
};

template <class T>
BackwardResult<T> backward(const ModelConfig& config, const ParametersT<T>& params,
                           std::span<const int> ids, std::span<const int> targets,
                           std::span<const T> weights);

// Token-level pooling across a batch of [BOS]...[EOS] sequences: total
// cross-entropy over total weight, with PAD targets at weight 0 and every
// sentinel at weight 1. Gradients are accumulated in a fixed order.
template <class T>
BackwardResult<T> batch_backward(const ModelConfig& config, const ParametersT<T>& params,
                                 const std::vector<std::vector<int>>& sequences,
                                 int pad_id, Rng* dropout_rng = nullptr);

// Causal softmax as used inside attention, exposed for invariant tests:
// row t is normalized over [0, t], the tail stays zero.
void causal_softmax_rows_f64(Mat<double>& scores);

// Central finite differences on >= n_coords randomly sampled parameter
// coordinates (64-bit). Returns max |analytic - numeric| /
// max(|analytic|, |numeric|, 1e-8).
double grad_check(const ModelConfig& config, std::uint64_t seed, double eps,
                  int n_coords = 200);

extern template struct ParametersT<float>;
extern template struct ParametersT<double>;
extern template class DecodeSession<float>;
extern template class DecodeSession<double>;

}  // namespace cms::model
