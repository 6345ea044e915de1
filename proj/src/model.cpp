#include "cms/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace cms::model {

namespace {

constexpr double kLnEps = 1e-5;

template <class T>
T gelu_scalar(T x) {
  const T c = T(0.7978845608028654);  // sqrt(2/pi)
  const T a = T(0.044715);
  return T(0.5) * x * (T(1) + std::tanh(c * (x + a * x * x * x)));
}

template <class T>
T gelu_grad_scalar(T x) {
  const T c = T(0.7978845608028654);
  const T a = T(0.044715);
  const T u = c * (x + a * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * c * (T(1) + T(3) * a * x * x);
}

template <class T>
void layernorm_rows(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, Mat<T>& out,
                    Mat<T>& xhat, std::vector<T>& rstd) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  out.resize(rows, cols);
  xhat.resize(rows, cols);
  rstd.assign(static_cast<std::size_t>(rows), T(0));
  for (Eigen::Index t = 0; t < rows; ++t) {
    const T mu = x.row(t).mean();
    const T var = (x.row(t).array() - mu).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLnEps));
    rstd[static_cast<std::size_t>(t)] = r;
    xhat.row(t) = ((x.row(t).array() - mu) * r).matrix();
    out.row(t) = xhat.row(t).cwiseProduct(gain.row(0)) + bias.row(0);
  }
}

// dx for y = xhat .* g + b given upstream dy; accumulates gain/bias grads.
template <class T>
void layernorm_backward_rows(const Mat<T>& dy, const Mat<T>& xhat,
                             const std::vector<T>& rstd, const Mat<T>& gain, Mat<T>& dx,
                             Mat<T>& dgain, Mat<T>& dbias) {
  const auto rows = dy.rows();
  const auto cols = dy.cols();
  dx.resize(rows, cols);
  for (Eigen::Index t = 0; t < rows; ++t) {
    dgain.row(0) += dy.row(t).cwiseProduct(xhat.row(t));
    dbias.row(0) += dy.row(t);
    Mat<T> dxhat = dy.row(t).cwiseProduct(gain.row(0));
    const T mean_dxhat = dxhat.row(0).mean();
    const T mean_dxhat_xhat = dxhat.row(0).cwiseProduct(xhat.row(t)).mean();
    dx.row(t) = ((dxhat.row(0).array() - mean_dxhat -
                  xhat.row(t).array() * mean_dxhat_xhat) *
                 rstd[static_cast<std::size_t>(t)])
                    .matrix();
  }
}

template <class T>
void layernorm_row(const Eigen::Ref<const Mat<T>>& x, const Mat<T>& gain,
                   const Mat<T>& bias, Mat<T>& out) {
  const T mu = x.row(0).mean();
  const T var = (x.row(0).array() - mu).square().mean();
  const T r = T(1) / std::sqrt(var + T(kLnEps));
  out.resize(1, x.cols());
  out.row(0) = ((x.row(0).array() - mu) * r).matrix().cwiseProduct(gain.row(0)) +
               bias.row(0);
}

// Softmax over the causal prefix [0..t] of each row; tail stays zero.
template <class T>
void causal_softmax_rows(Mat<T>& scores) {
  for (Eigen::Index t = 0; t < scores.rows(); ++t) {
    auto prefix = scores.row(t).head(t + 1);
    const T mx = prefix.maxCoeff();
    prefix = (prefix.array() - mx).exp().matrix();
    prefix /= prefix.sum();
    if (t + 1 < scores.cols()) scores.row(t).tail(scores.cols() - t - 1).setZero();
  }
}

template <class T>
struct LayerCache {
  Mat<T> x_in;                 // residual input
  Mat<T> a, xhat1;             // LN1 output and normalized input
  std::vector<T> rstd1;
  Mat<T> q, k, v;              // projections
  std::vector<Mat<T>> probs;   // per head [T, T]
  Mat<T> attn_concat;          // heads concatenated [T, D]
  Mat<T> x_mid;                // after attention residual
  Mat<T> b, xhat2;             // LN2
  std::vector<T> rstd2;
  Mat<T> fc;                   // pre-GELU
  Mat<T> gelu;                 // post-GELU
  Mat<T> attn_drop, mlp_drop;  // inverted dropout masks, empty when disabled
};

template <class T>
struct ForwardCache {
  Mat<T> x0;
  std::vector<LayerCache<T>> layers;
  Mat<T> y, xhatf;  // final layer norm
  std::vector<T> rstdf;
  Mat<T> logits;
};

// Residual dropout on the attention and MLP branch outputs, inverted
// scaling. Applied only on the training path; decode never drops.
template <class T>
Mat<T> draw_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
  Mat<T> mask(rows, cols);
  const T keep_scale = T(1.0 / (1.0 - p));
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      mask(i, j) = rng.next_double() >= p ? keep_scale : T(0);
  return mask;
}

template <class T>
void forward_train(const ModelConfig& config, const ParametersT<T>& params,
                   std::span<const int> ids, ForwardCache<T>& cache,
                   Rng* dropout_rng = nullptr) {
  const int t_len = static_cast<int>(ids.size());
  if (t_len == 0) throw ShapeMismatch("empty input sequence");
  if (t_len > config.context_length)
    throw SequenceTooLong("sequence of length " + std::to_string(t_len) +
                          " exceeds context " + std::to_string(config.context_length));
  const int d = config.d_model;
  const int heads = config.n_heads;
  const int hs = d / heads;
  const T scale = T(1) / std::sqrt(T(hs));
  const bool use_dropout = config.dropout > 0.0;
  if (use_dropout && dropout_rng == nullptr)
    throw std::invalid_argument("dropout > 0 requires an rng on the training path");

  cache.x0.resize(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    const int id = ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= config.vocab_size)
      throw ShapeMismatch("token id out of range: " + std::to_string(id));
    cache.x0.row(t) = params.tok_emb.row(id) + params.pos_emb.row(t);
  }

  cache.layers.assign(static_cast<std::size_t>(config.n_layers), {});
  Mat<T> x = cache.x0;
  for (int l = 0; l < config.n_layers; ++l) {
    LayerCache<T>& lc = cache.layers[static_cast<std::size_t>(l)];
    const LayerParamsT<T>& lp = params.layers[static_cast<std::size_t>(l)];
    lc.x_in = x;

    layernorm_rows(lc.x_in, lp.ln1_g, lp.ln1_b, lc.a, lc.xhat1, lc.rstd1);
    lc.q = lc.a * lp.wq;
    lc.q.rowwise() += lp.bq.row(0);
    lc.k = lc.a * lp.wk;
    lc.k.rowwise() += lp.bk.row(0);
    lc.v = lc.a * lp.wv;
    lc.v.rowwise() += lp.bv.row(0);

    lc.probs.assign(static_cast<std::size_t>(heads), Mat<T>());
    lc.attn_concat.resize(t_len, d);
    for (int h = 0; h < heads; ++h) {
      auto qh = lc.q.middleCols(h * hs, hs);
      auto kh = lc.k.middleCols(h * hs, hs);
      auto vh = lc.v.middleCols(h * hs, hs);
      Mat<T>& probs = lc.probs[static_cast<std::size_t>(h)];
      probs = qh * kh.transpose() * scale;
      causal_softmax_rows(probs);
      lc.attn_concat.middleCols(h * hs, hs) = probs * vh;
    }
    Mat<T> attn_out = lc.attn_concat * lp.wo;
    attn_out.rowwise() += lp.bo.row(0);
    if (use_dropout) {
      lc.attn_drop = draw_dropout_mask<T>(t_len, d, config.dropout, *dropout_rng);
      attn_out = attn_out.cwiseProduct(lc.attn_drop);
    }
    lc.x_mid = lc.x_in + attn_out;

    layernorm_rows(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.b, lc.xhat2, lc.rstd2);
    lc.fc = lc.b * lp.w_fc;
    lc.fc.rowwise() += lp.b_fc.row(0);
    lc.gelu = lc.fc.unaryExpr([](T v) { return gelu_scalar(v); });
    Mat<T> mlp_out = lc.gelu * lp.w_proj;
    mlp_out.rowwise() += lp.b_proj.row(0);
    if (use_dropout) {
      lc.mlp_drop = draw_dropout_mask<T>(t_len, d, config.dropout, *dropout_rng);
      mlp_out = mlp_out.cwiseProduct(lc.mlp_drop);
    }
    x = lc.x_mid + mlp_out;
  }

  layernorm_rows(x, params.lnf_g, params.lnf_b, cache.y, cache.xhatf, cache.rstdf);
  cache.logits = cache.y * params.tok_emb.transpose();
}

template <class T>
struct LossAccum {
  T ce_sum = T(0);
  T weight_sum = T(0);
};

// Cross-entropy sums and the unnormalized dlogits = w * (softmax - onehot).
template <class T>
LossAccum<T> loss_and_dlogits(const Mat<T>& logits, std::span<const int> targets,
                              std::span<const T> weights, Mat<T>* dlogits) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() ||
      targets.size() != weights.size())
    throw ShapeMismatch("logits/targets/weights disagree");
  LossAccum<T> acc;
  if (dlogits != nullptr) dlogits->setZero(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const int target = targets[static_cast<std::size_t>(t)];
    if (target < 0 || target >= logits.cols())
      throw ShapeMismatch("target id out of range: " + std::to_string(target));
    const T w = weights[static_cast<std::size_t>(t)];
    if (w == T(0)) continue;
    const T mx = logits.row(t).maxCoeff();
    const T lse = std::log((logits.row(t).array() - mx).exp().sum()) + mx;
    acc.ce_sum += w * (lse - logits(t, target));
    acc.weight_sum += w;
    if (dlogits != nullptr) {
      dlogits->row(t) = ((logits.row(t).array() - lse).exp() * w).matrix();
      (*dlogits)(t, target) -= w;
    }
  }
  return acc;
}

// Accumulates unnormalized gradients (of the cross-entropy *sum*) into
// grads; the caller rescales by the pooled weight afterwards.
template <class T>
LossAccum<T> backward_accumulate(const ModelConfig& config, const ParametersT<T>& params,
                                 std::span<const int> ids, std::span<const int> targets,
                                 std::span<const T> weights, ParametersT<T>& grads,
                                 Rng* dropout_rng = nullptr) {
  ForwardCache<T> cache;
  forward_train(config, params, ids, cache, dropout_rng);

  Mat<T> dlogits;
  const LossAccum<T> acc = loss_and_dlogits(cache.logits, targets, weights, &dlogits);
  if (acc.weight_sum == T(0)) return acc;

  const int t_len = static_cast<int>(ids.size());
  const int d = config.d_model;
  const int heads = config.n_heads;
  const int hs = d / heads;
  const T scale = T(1) / std::sqrt(T(hs));

  // Output projection (tied embedding).
  Mat<T> dy = dlogits * params.tok_emb;
  grads.tok_emb += dlogits.transpose() * cache.y;

  Mat<T> dx;
  layernorm_backward_rows(dy, cache.xhatf, cache.rstdf, params.lnf_g, dx, grads.lnf_g,
                          grads.lnf_b);

  for (int l = config.n_layers - 1; l >= 0; --l) {
    const LayerCache<T>& lc = cache.layers[static_cast<std::size_t>(l)];
    const LayerParamsT<T>& lp = params.layers[static_cast<std::size_t>(l)];
    LayerParamsT<T>& lg = grads.layers[static_cast<std::size_t>(l)];

    // MLP sub-block: x = x_mid + drop(gelu(ln2(x_mid) Wfc + bfc) Wproj + bproj)
    Mat<T> dmlp_out = lc.mlp_drop.size() > 0 ? dx.cwiseProduct(lc.mlp_drop) : dx;
    lg.w_proj += lc.gelu.transpose() * dmlp_out;
    lg.b_proj.row(0) += dmlp_out.colwise().sum();
    Mat<T> dgelu = dmlp_out * lp.w_proj.transpose();
    Mat<T> dfc = dgelu.cwiseProduct(
        lc.fc.unaryExpr([](T v) { return gelu_grad_scalar(v); }));
    lg.w_fc += lc.b.transpose() * dfc;
    lg.b_fc.row(0) += dfc.colwise().sum();
    Mat<T> db = dfc * lp.w_fc.transpose();

    Mat<T> dx_mid;
    layernorm_backward_rows(db, lc.xhat2, lc.rstd2, lp.ln2_g, dx_mid, lg.ln2_g,
                            lg.ln2_b);
    dx_mid += dx;  // residual branch

    // Attention sub-block: x_mid = x_in + drop(heads(ln1(x_in)) Wo + bo)
    Mat<T> dattn_out =
        lc.attn_drop.size() > 0 ? dx_mid.cwiseProduct(lc.attn_drop) : dx_mid;
    lg.wo += lc.attn_concat.transpose() * dattn_out;
    lg.bo.row(0) += dattn_out.colwise().sum();
    Mat<T> dconcat = dattn_out * lp.wo.transpose();

    Mat<T> dq(t_len, d), dk(t_len, d), dv(t_len, d);
    for (int h = 0; h < heads; ++h) {
      const Mat<T>& probs = lc.probs[static_cast<std::size_t>(h)];
      auto kh = lc.k.middleCols(h * hs, hs);
      auto qh = lc.q.middleCols(h * hs, hs);
      auto vh = lc.v.middleCols(h * hs, hs);
      auto doh = dconcat.middleCols(h * hs, hs);

      Mat<T> dprobs = doh * vh.transpose();
      dv.middleCols(h * hs, hs) = probs.transpose() * doh;

      Mat<T> dscores(t_len, t_len);
      for (int t = 0; t < t_len; ++t) {
        const T dot = dprobs.row(t).cwiseProduct(probs.row(t)).sum();
        dscores.row(t) = probs.row(t).cwiseProduct(
            (dprobs.row(t).array() - dot).matrix());
      }
      dq.middleCols(h * hs, hs) = dscores * kh * scale;
      dk.middleCols(h * hs, hs) = dscores.transpose() * qh * scale;
    }

    lg.wq += lc.a.transpose() * dq;
    lg.bq.row(0) += dq.colwise().sum();
    lg.wk += lc.a.transpose() * dk;
    lg.bk.row(0) += dk.colwise().sum();
    lg.wv += lc.a.transpose() * dv;
    lg.bv.row(0) += dv.colwise().sum();
    Mat<T> da = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();

    Mat<T> dx_in;
    layernorm_backward_rows(da, lc.xhat1, lc.rstd1, lp.ln1_g, dx_in, lg.ln1_g, lg.ln1_b);
    dx = dx_in + dx_mid;
  }

  for (int t = 0; t < t_len; ++t) {
    grads.tok_emb.row(ids[static_cast<std::size_t>(t)]) += dx.row(t);
    grads.pos_emb.row(t) += dx.row(t);
  }
  return acc;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 0 || n_heads < 1 || d_model < 1 || d_ff < 1 || context_length < 1 ||
      vocab_size < 2)
    throw std::invalid_argument("model dimensions must be positive (vocab >= 2)");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("d_model must be divisible by n_heads");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("dropout must be in [0, 1)");
  if (precision_bits != 32 && precision_bits != 64)
    throw std::invalid_argument("precision must be 32 or 64 bits");
}

template <class T>
bool ParametersT<T>::all_finite() const {
  bool ok = true;
  for_each_tensor([&](const std::string&, const Mat<T>& m) {
    if (!m.allFinite()) ok = false;
  });
  return ok;
}

template <class T>
std::size_t ParametersT<T>::coordinate_count() const {
  std::size_t n = 0;
  for_each_tensor(
      [&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <class T>
ParametersT<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const int d = config.d_model;
  ParametersT<T> p;
  Rng rng(mix64(seed ^ hash64("model-init")));

  auto normal_fill = [&](Mat<T>& m, Eigen::Index rows, Eigen::Index cols) {
    m.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j)
        m(i, j) = static_cast<T>(rng.normal(0.0, 0.02));
  };
  auto const_fill = [&](Mat<T>& m, Eigen::Index rows, Eigen::Index cols, T value) {
    m.resize(rows, cols);
    m.setConstant(value);
  };

  normal_fill(p.tok_emb, config.vocab_size, d);
  normal_fill(p.pos_emb, config.context_length, d);
  p.layers.resize(static_cast<std::size_t>(config.n_layers));
  for (auto& layer : p.layers) {
    const_fill(layer.ln1_g, 1, d, T(1));
    const_fill(layer.ln1_b, 1, d, T(0));
    normal_fill(layer.wq, d, d);
    const_fill(layer.bq, 1, d, T(0));
    normal_fill(layer.wk, d, d);
    const_fill(layer.bk, 1, d, T(0));
    normal_fill(layer.wv, d, d);
    const_fill(layer.bv, 1, d, T(0));
    normal_fill(layer.wo, d, d);
    const_fill(layer.bo, 1, d, T(0));
    const_fill(layer.ln2_g, 1, d, T(1));
    const_fill(layer.ln2_b, 1, d, T(0));
    normal_fill(layer.w_fc, d, config.d_ff);
    const_fill(layer.b_fc, 1, config.d_ff, T(0));
    normal_fill(layer.w_proj, config.d_ff, d);
    const_fill(layer.b_proj, 1, d, T(0));
  }
  const_fill(p.lnf_g, 1, d, T(1));
  const_fill(p.lnf_b, 1, d, T(0));
  return p;
}

template <class T>
ParametersT<T> zeros_like(const ParametersT<T>& params) {
  ParametersT<T> z = params;
  z.for_each_tensor([](const std::string&, Mat<T>& m) { m.setZero(); });
  return z;
}

template <class T>
DecodeSession<T>::DecodeSession(const ModelConfig& config, const ParametersT<T>& params)
    : config_(&config), params_(&params) {
  config.validate();
  k_cache_.assign(static_cast<std::size_t>(config.n_layers),
                  Mat<T>::Zero(config.context_length, config.d_model));
  v_cache_.assign(static_cast<std::size_t>(config.n_layers),
                  Mat<T>::Zero(config.context_length, config.d_model));
}

template <class T>
Mat<T> DecodeSession<T>::feed(int token_id) {
  const ModelConfig& config = *config_;
  const ParametersT<T>& params = *params_;
  if (len_ >= config.context_length)
    throw SequenceTooLong("decode position " + std::to_string(len_) +
                          " exceeds context " + std::to_string(config.context_length));
  if (token_id < 0 || token_id >= config.vocab_size)
    throw ShapeMismatch("token id out of range: " + std::to_string(token_id));

  const int d = config.d_model;
  const int heads = config.n_heads;
  const int hs = d / heads;
  const T scale = T(1) / std::sqrt(T(hs));
  const int t = len_;

  Mat<T> x = params.tok_emb.row(token_id) + params.pos_emb.row(t);
  Mat<T> a(1, d), scores(1, t + 1), concat(1, d), b(1, d);
  for (int l = 0; l < config.n_layers; ++l) {
    const LayerParamsT<T>& lp = params.layers[static_cast<std::size_t>(l)];
    Mat<T>& kc = k_cache_[static_cast<std::size_t>(l)];
    Mat<T>& vc = v_cache_[static_cast<std::size_t>(l)];

    layernorm_row<T>(x, lp.ln1_g, lp.ln1_b, a);
    Mat<T> q = a * lp.wq + lp.bq;
    kc.row(t) = (a * lp.wk + lp.bk).row(0);
    vc.row(t) = (a * lp.wv + lp.bv).row(0);

    for (int h = 0; h < heads; ++h) {
      auto qh = q.middleCols(h * hs, hs);
      auto kh = kc.topRows(t + 1).middleCols(h * hs, hs);
      auto vh = vc.topRows(t + 1).middleCols(h * hs, hs);
      scores.resize(1, t + 1);
      scores.row(0) = (qh * kh.transpose() * scale).row(0);
      const T mx = scores.row(0).maxCoeff();
      scores.row(0) = (scores.row(0).array() - mx).exp().matrix();
      scores.row(0) /= scores.row(0).sum();
      concat.middleCols(h * hs, hs) = scores * vh;
    }
    x += concat * lp.wo + lp.bo;

    layernorm_row<T>(x, lp.ln2_g, lp.ln2_b, b);
    Mat<T> fc = b * lp.w_fc + lp.b_fc;
    fc = fc.unaryExpr([](T v) { return gelu_scalar(v); });
    x += fc * lp.w_proj + lp.b_proj;
  }

  Mat<T> y(1, d);
  layernorm_row<T>(x, params.lnf_g, params.lnf_b, y);
  ++len_;
  return y * params.tok_emb.transpose();
}

template <class T>
Mat<T> forward(const ModelConfig& config, const ParametersT<T>& params,
               std::span<const int> ids) {
  if (ids.empty()) throw ShapeMismatch("empty input sequence");
  if (static_cast<int>(ids.size()) > config.context_length)
    throw SequenceTooLong("sequence of length " + std::to_string(ids.size()) +
                          " exceeds context " + std::to_string(config.context_length));
  DecodeSession<T> session(config, params);
  Mat<T> logits(static_cast<Eigen::Index>(ids.size()), config.vocab_size);
  for (std::size_t t = 0; t < ids.size(); ++t)
    logits.row(static_cast<Eigen::Index>(t)) = session.feed(ids[t]).row(0);
  return logits;
}

template <class T>
T loss(const Mat<T>& logits, std::span<const int> targets, std::span<const T> weights) {
  const LossAccum<T> acc = loss_and_dlogits<T>(logits, targets, weights, nullptr);
  if (acc.weight_sum == T(0)) throw ShapeMismatch("no positions carry loss weight");
  return acc.ce_sum / acc.weight_sum;
}

template <class T>
T train_loss(const ModelConfig& config, const ParametersT<T>& params,
             std::span<const int> ids, std::span<const int> targets,
             std::span<const T> weights) {
  ForwardCache<T> cache;
  forward_train(config, params, ids, cache);
  return loss<T>(cache.logits, targets, weights);
}

template <class T>
BackwardResult<T> backward(const ModelConfig& config, const ParametersT<T>& params,
                           std::span<const int> ids, std::span<const int> targets,
                           std::span<const T> weights) {
  BackwardResult<T> result;
  result.grads = zeros_like(params);
  const LossAccum<T> acc =
      backward_accumulate(config, params, ids, targets, weights, result.grads);
  if (acc.weight_sum == T(0)) throw ShapeMismatch("no positions carry loss weight");
  const T inv = T(1) / acc.weight_sum;
  result.grads.for_each_tensor([&](const std::string&, Mat<T>& m) { m *= inv; });
  result.loss = acc.ce_sum * inv;
  result.total_weight = acc.weight_sum;
  return result;
}

template <class T>
BackwardResult<T> batch_backward(const ModelConfig& config, const ParametersT<T>& params,
                                 const std::vector<std::vector<int>>& sequences,
                                 int pad_id, Rng* dropout_rng) {
  BackwardResult<T> result;
  result.grads = zeros_like(params);
  LossAccum<T> total;
  for (const auto& seq : sequences) {
    if (seq.size() < 2)
      throw ShapeMismatch("training sequence must hold at least two tokens");
    std::span<const int> ids(seq.data(), seq.size() - 1);
    std::span<const int> targets(seq.data() + 1, seq.size() - 1);
    std::vector<T> weights(targets.size());
    for (std::size_t t = 0; t < targets.size(); ++t)
      weights[t] = targets[t] == pad_id ? T(0) : T(1);
    const LossAccum<T> acc =
        backward_accumulate(config, params, ids, targets, std::span<const T>(weights),
                            result.grads, dropout_rng);
    total.ce_sum += acc.ce_sum;
    total.weight_sum += acc.weight_sum;
  }
  if (total.weight_sum == T(0)) throw ShapeMismatch("batch carries no loss weight");
  const T inv = T(1) / total.weight_sum;
  result.grads.for_each_tensor([&](const std::string&, Mat<T>& m) { m *= inv; });
  result.loss = total.ce_sum * inv;
  result.total_weight = total.weight_sum;
  return result;
}

void causal_softmax_rows_f64(Mat<double>& scores) { causal_softmax_rows(scores); }

double grad_check(const ModelConfig& config, std::uint64_t seed, double eps,
                  int n_coords) {
  config.validate();
  Parameters params = init_parameters<double>(config, seed);
  // Check at a generic point with O(1) activations: near the tiny
  // training init most gradients sit below the finite-difference roundoff
  // floor (|dL| ~ 1e-15 against steps of 2*eps).
  params.for_each_tensor([](const std::string& name, Mat<double>& m) {
    if (name.find("ln") == std::string::npos) m *= 10.0;
  });
  Rng rng(mix64(seed ^ hash64("grad-check")));

  const int t_len = std::min(config.context_length, 6);
  std::vector<int> ids(static_cast<std::size_t>(t_len));
  std::vector<int> targets(static_cast<std::size_t>(t_len));
  std::vector<double> weights(static_cast<std::size_t>(t_len), 1.0);
  for (auto& id : ids) id = static_cast<int>(rng.next_below(config.vocab_size));
  for (auto& id : targets) id = static_cast<int>(rng.next_below(config.vocab_size));

  const auto analytic = backward<double>(config, params, ids, targets, weights);

  struct Slot {
    Mat<double>* tensor;
    const Mat<double>* grad;
    std::size_t offset;
  };
  std::vector<std::pair<std::string, Mat<double>*>> tensors;
  params.for_each_tensor([&](const std::string& name, Mat<double>& m) {
    tensors.emplace_back(name, &m);
  });
  std::vector<const Mat<double>*> grad_tensors;
  analytic.grads.for_each_tensor([&](const std::string&, const Mat<double>& m) {
    grad_tensors.push_back(&m);
  });

  const std::size_t total = params.coordinate_count();
  std::set<std::size_t> picked;
  while (picked.size() < static_cast<std::size_t>(n_coords) && picked.size() < total)
    picked.insert(rng.next_below(total));

  double max_rel = 0.0;
  for (const std::size_t coord : picked) {
    std::size_t offset = coord;
    std::size_t which = 0;
    while (offset >= static_cast<std::size_t>(tensors[which].second->size())) {
      offset -= static_cast<std::size_t>(tensors[which].second->size());
      ++which;
    }
    Mat<double>& tensor = *tensors[which].second;
    double* cell = tensor.data() + offset;
    const double saved = *cell;

    *cell = saved + eps;
    const double loss_plus = train_loss<double>(config, params, ids, targets, weights);
    *cell = saved - eps;
    const double loss_minus = train_loss<double>(config, params, ids, targets, weights);
    *cell = saved;

    const double numeric = (loss_plus - loss_minus) / (2.0 * eps);
    const double a = grad_tensors[which]->data()[offset];
    const double rel = std::fabs(a - numeric) /
                       std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

template struct ParametersT<float>;
template struct ParametersT<double>;
template class DecodeSession<float>;
template class DecodeSession<double>;

template ParametersT<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParametersT<double> init_parameters<double>(const ModelConfig&, std::uint64_t);
template ParametersT<float> zeros_like<float>(const ParametersT<float>&);
template ParametersT<double> zeros_like<double>(const ParametersT<double>&);
template Mat<float> forward<float>(const ModelConfig&, const ParametersT<float>&,
                                   std::span<const int>);
template Mat<double> forward<double>(const ModelConfig&, const ParametersT<double>&,
                                     std::span<const int>);
template float loss<float>(const Mat<float>&, std::span<const int>,
                           std::span<const float>);
template double loss<double>(const Mat<double>&, std::span<const int>,
                             std::span<const double>);
template float train_loss<float>(const ModelConfig&, const ParametersT<float>&,
                                 std::span<const int>, std::span<const int>,
                                 std::span<const float>);
template double train_loss<double>(const ModelConfig&, const ParametersT<double>&,
                                   std::span<const int>, std::span<const int>,
                                   std::span<const double>);
template BackwardResult<float> backward<float>(const ModelConfig&,
                                               const ParametersT<float>&,
                                               std::span<const int>, std::span<const int>,
                                               std::span<const float>);
template BackwardResult<double> backward<double>(const ModelConfig&,
                                                 const ParametersT<double>&,
                                                 std::span<const int>,
                                                 std::span<const int>,
                                                 std::span<const double>);
template BackwardResult<float> batch_backward<float>(const ModelConfig&,
                                                     const ParametersT<float>&,
                                                     const std::vector<std::vector<int>>&,
                                                     int, Rng*);
template BackwardResult<double> batch_backward<double>(
    const ModelConfig&, const ParametersT<double>&, const std::vector<std::vector<int>>&,
    int, Rng*);

}  // namespace cms::model
