#include "rofl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rofl/error.hpp"
#include "rofl/rng.hpp"

namespace rofl {

template <typename T>
struct NormStats {
  RowMatrix<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

namespace {

template <typename T>
using Mat = RowMatrix<T>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

constexpr double kNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& gain, const Mat<T>& bias, Mat<T>& out, NormStats<T>* stats) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  out.resize(n, d);
  if (stats) {
    stats->xhat.resize(n, d);
    stats->rstd.resize(n);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    const T rstd = T(1) / std::sqrt(var + T(kNormEps));
    RowVec<T> xhat = (x.row(i).array() - mean) * rstd;
    out.row(i) = xhat.array() * gain.row(0).array() + bias.row(0).array();
    if (stats) {
      stats->xhat.row(i) = xhat;
      stats->rstd(i) = rstd;
    }
  }
}

// dx += d(LN)/dx applied to dy; gain/bias gradients accumulated when non-null.
template <typename T>
void layer_norm_backward(const Mat<T>& dy, const NormStats<T>& s, const Mat<T>& gain, Mat<T>& dx, Mat<T>* dgain,
                         Mat<T>* dbias) {
  const Eigen::Index n = dy.rows();
  const T inv_d = T(1) / static_cast<T>(dy.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVec<T> dxhat = dy.row(i).array() * gain.row(0).array();
    const T mean_dxhat = dxhat.sum() * inv_d;
    const T mean_dxhat_xhat = (dxhat.array() * s.xhat.row(i).array()).sum() * inv_d;
    dx.row(i).array() += s.rstd(i) * (dxhat.array() - mean_dxhat - s.xhat.row(i).array() * mean_dxhat_xhat);
  }
  if (dgain) dgain->row(0) += (dy.array() * s.xhat.array()).colwise().sum().matrix();
  if (dbias) dbias->row(0) += dy.colwise().sum();
}

template <typename T>
T gelu(T x) {
  const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(inner));
}

template <typename T>
T gelu_grad(T x) {
  const T inner = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T t = std::tanh(inner);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
}

template <typename T>
Mat<T> zeros(Eigen::Index r, Eigen::Index c) {
  return Mat<T>::Zero(r, c);
}

void check_context(const ModelConfig& config, std::size_t length) {
  if (length > config.ctx_len) {
    throw ContextOverflow("sequence of " + std::to_string(length) + " tokens exceeds ctx_len " +
                          std::to_string(config.ctx_len));
  }
}

void check_ids(const ModelConfig& config, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t >= config.vocab) {
      throw InvalidToken("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(config.vocab));
    }
  }
}

// Lowest id wins ties.
template <typename Row>
TokenId argmax_lowest(const Row& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

// Evaluates tokens at positions prefix.length.. given the cached prefix.
// Returns final-normalized hidden states [n x d]. If store is non-null, the new
// keys/values are written into it at rows prefix.length.. (store may alias prefix).
template <typename T>
Mat<T> run_tail(const Params<T>& p, const ModelConfig& cfg, const KvCache<T>& prefix,
                std::span<const TokenId> tokens, KvCache<T>* store) {
  const Eigen::Index past = static_cast<Eigen::Index>(prefix.length);
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Mat<T> x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    x.row(i) = p.tok_emb.row(tokens[i]) + p.pos_emb.row(past + i);
  }

  Mat<T> a, q, k, v, attn(n, d), h;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& lp = p.layers[l];
    layer_norm<T>(x, lp.ln1_gain, lp.ln1_bias, a, nullptr);
    q.noalias() = a * lp.wq;
    k.noalias() = a * lp.wk;
    v.noalias() = a * lp.wv;
    for (Eigen::Index hd = 0; hd < static_cast<Eigen::Index>(cfg.n_heads); ++hd) {
      const auto qh = q.middleCols(hd * dh, dh);
      const auto kh = k.middleCols(hd * dh, dh);
      const auto vh = v.middleCols(hd * dh, dh);
      Mat<T> s_own = (qh * kh.transpose()) * scale;
      Mat<T> s_past;
      if (past > 0) {
        s_past = (qh * prefix.keys[l].block(0, hd * dh, past, dh).transpose()) * scale;
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        T m = s_own.row(i).head(i + 1).maxCoeff();
        if (past > 0) m = std::max(m, s_past.row(i).maxCoeff());
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          s_own(i, j) = std::exp(s_own(i, j) - m);
          sum += s_own(i, j);
        }
        for (Eigen::Index j = i + 1; j < n; ++j) s_own(i, j) = 0;
        if (past > 0) {
          s_past.row(i) = (s_past.row(i).array() - m).exp();
          sum += s_past.row(i).sum();
          s_past.row(i) /= sum;
        }
        s_own.row(i) /= sum;
      }
      auto out = attn.middleCols(hd * dh, dh);
      out.noalias() = s_own * vh;
      if (past > 0) out.noalias() += s_past * prefix.values[l].block(0, hd * dh, past, dh);
    }
    if (store) {
      store->keys[l].middleRows(past, n) = k;
      store->values[l].middleRows(past, n) = v;
    }
    x.noalias() += attn * lp.wo;
    layer_norm<T>(x, lp.ln2_gain, lp.ln2_bias, a, nullptr);
    h.noalias() = a * lp.w1;
    h.rowwise() += lp.b1.row(0);
    h = h.unaryExpr([](T z) { return gelu(z); });
    x.noalias() += h * lp.w2;
    x.rowwise() += lp.b2.row(0);
  }
  Mat<T> out;
  layer_norm<T>(x, p.final_gain, p.final_bias, out, nullptr);
  return out;
}

// log-softmax(row)[target], accumulated in double.
template <typename Row>
double log_prob(const Row& row, TokenId target) {
  const double m = static_cast<double>(row.maxCoeff());
  double sum = 0;
  for (Eigen::Index i = 0; i < row.size(); ++i) sum += std::exp(static_cast<double>(row(i)) - m);
  return static_cast<double>(row(target)) - m - std::log(sum);
}

}  // namespace

template <typename T>
struct LayerTrace {
  NormStats<T> ln1, ln2;
  Mat<T> a1, a2;
  Mat<T> q, k, v;
  std::vector<Mat<T>> probs;  // per head [n x n], zero above the diagonal
  Mat<T> attn;
  Mat<T> h_pre, h_act;
};

template <typename T>
struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::vector<LayerTrace<T>> layers;
  NormStats<T> final_stats;
  Mat<T> final_out;
  std::vector<Eigen::Index> rows;  // positions contributing to the loss
  std::vector<TokenId> targets;
  std::vector<T> weights;
  Mat<T> probs;  // softmax at rows [R x V]
};

// ---------------------------------------------------------------- Params

template <typename T>
void Params<T>::visit(const std::function<void(const std::string&, RowMatrix<T>&)>& fn) {
  fn("tok_emb", tok_emb);
  fn("pos_emb", pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto& lp = layers[l];
    fn(pre + "attn.wk", lp.wk);
    fn(pre + "attn.wo", lp.wo);
    fn(pre + "attn.wq", lp.wq);
    fn(pre + "attn.wv", lp.wv);
    fn(pre + "ln1.bias", lp.ln1_bias);
    fn(pre + "ln1.gain", lp.ln1_gain);
    fn(pre + "ln2.bias", lp.ln2_bias);
    fn(pre + "ln2.gain", lp.ln2_gain);
    fn(pre + "mlp.b1", lp.b1);
    fn(pre + "mlp.b2", lp.b2);
    fn(pre + "mlp.w1", lp.w1);
    fn(pre + "mlp.w2", lp.w2);
  }
  fn("final_norm.bias", final_bias);
  fn("final_norm.gain", final_gain);
  fn("lm_head", lm_head);
}

template <typename T>
void Params<T>::visit(const std::function<void(const std::string&, const RowMatrix<T>&)>& fn) const {
  const_cast<Params<T>*>(this)->visit(
      [&](const std::string& name, RowMatrix<T>& m) { fn(name, static_cast<const RowMatrix<T>&>(m)); });
}

template <typename T>
Params<T> Params<T>::zeros_like(const ModelConfig& config) {
  Params<T> p;
  p.layers.resize(config.n_layers);
  const auto layout = tensor_layout(config);
  p.visit([&](const std::string& name, RowMatrix<T>& m) {
    const auto& shape = layout.at(name);
    const Eigen::Index rows = shape.size() == 2 ? shape[0] : 1;
    const Eigen::Index cols = shape.size() == 2 ? shape[1] : shape[0];
    m = RowMatrix<T>::Zero(rows, cols);
  });
  return p;
}

template <typename T>
Params<T> params_from_checkpoint(const Checkpoint& ckpt) {
  Params<T> p = Params<T>::zeros_like(ckpt.config);
  p.visit([&](const std::string& name, RowMatrix<T>& m) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw FormatError("checkpoint lacks tensor " + name);
    if (it->second.data.size() != static_cast<std::size_t>(m.size())) {
      throw FormatError("tensor " + name + " has wrong size");
    }
    m = Eigen::Map<const RowMatrix<float>>(it->second.data.data(), m.rows(), m.cols()).template cast<T>();
  });
  return p;
}

template <typename T>
Checkpoint checkpoint_from_params(const Params<T>& params, const ModelConfig& config) {
  Checkpoint ckpt;
  ckpt.config = config;
  const auto layout = tensor_layout(config);
  params.visit([&](const std::string& name, const RowMatrix<T>& m) {
    Tensor t;
    t.shape = layout.at(name);
    t.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<RowMatrix<float>>(t.data.data(), m.rows(), m.cols()) = m.template cast<float>();
    ckpt.tensors.emplace(name, std::move(t));
  });
  return ckpt;
}

// ---------------------------------------------------------------- BasicModel

template <typename T>
BasicModel<T>::BasicModel(Checkpoint ckpt) : ckpt_(std::move(ckpt)) {
  ckpt_.config.validate();
  params_ = params_from_checkpoint<T>(ckpt_);
}

template <typename T>
void BasicModel<T>::check_tokens(std::span<const TokenId> tokens, std::size_t offset) const {
  check_context(ckpt_.config, offset + tokens.size());
  check_ids(ckpt_.config, tokens);
}

template <typename T>
RowMatrix<T> BasicModel<T>::forward(std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  if (tokens.empty()) return RowMatrix<T>(0, vocab());
  const KvCache<T> none;
  Mat<T> hidden = run_tail<T>(params_, ckpt_.config, none, tokens, nullptr);
  return hidden * params_.lm_head;
}

template <typename T>
KvCache<T> BasicModel<T>::empty_cache() const {
  KvCache<T> cache;
  cache.keys.assign(params_.layers.size(), Mat<T>(ckpt_.config.ctx_len, ckpt_.config.d_model));
  cache.values.assign(params_.layers.size(), Mat<T>(ckpt_.config.ctx_len, ckpt_.config.d_model));
  return cache;
}

template <typename T>
Eigen::Matrix<T, 1, Eigen::Dynamic> BasicModel<T>::extend(KvCache<T>& cache, std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw InvalidArgument("extend needs at least one token");
  check_tokens(tokens, cache.length);
  Mat<T> hidden = run_tail<T>(params_, ckpt_.config, cache, tokens, &cache);
  cache.length += tokens.size();
  return hidden.row(hidden.rows() - 1) * params_.lm_head;
}

template <typename T>
double BasicModel<T>::tail_nll(const KvCache<T>& prefix, std::span<const TokenId> tail, std::span<const TokenId> targets,
                               std::span<const std::uint8_t> mask) const {
  if (targets.size() != tail.size() || mask.size() != tail.size()) {
    throw InvalidArgument("tail_nll: targets/mask must match tail length");
  }
  check_tokens(tail, prefix.length);
  check_ids(ckpt_.config, targets);
  Mat<T> hidden = run_tail<T>(params_, ckpt_.config, prefix, tail, nullptr);
  double loss = 0;
  RowVec<T> logits;
  for (std::size_t i = 0; i < tail.size(); ++i) {
    if (!mask[i]) continue;
    logits.noalias() = hidden.row(static_cast<Eigen::Index>(i)) * params_.lm_head;
    loss -= log_prob(logits, targets[i]);
  }
  return loss;
}

// ---------------------------------------------------------------- training pass

template <typename T>
double sequence_loss(const Params<T>& p, const ModelConfig& cfg, std::span<const TokenId> tokens,
                     std::span<const TokenId> targets, std::span<const T> weights, ForwardTrace<T>* trace) {
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  if (targets.size() != tokens.size() || weights.size() != tokens.size()) {
    throw InvalidArgument("sequence_loss: targets/weights must match token count");
  }
  if (n == 0) throw InvalidArgument("sequence_loss: empty sequence");
  check_context(cfg, tokens.size());
  check_ids(cfg, tokens);

  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  ForwardTrace<T> local;
  ForwardTrace<T>& tr = trace ? *trace : local;
  tr.tokens.assign(tokens.begin(), tokens.end());
  tr.layers.resize(p.layers.size());

  Mat<T> x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = p.tok_emb.row(tokens[i]) + p.pos_emb.row(i);

  Mat<T> proj;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& lp = p.layers[l];
    auto& lt = tr.layers[l];
    layer_norm<T>(x, lp.ln1_gain, lp.ln1_bias, lt.a1, &lt.ln1);
    lt.q.noalias() = lt.a1 * lp.wq;
    lt.k.noalias() = lt.a1 * lp.wk;
    lt.v.noalias() = lt.a1 * lp.wv;
    lt.attn.resize(n, d);
    lt.probs.resize(cfg.n_heads);
    for (Eigen::Index hd = 0; hd < static_cast<Eigen::Index>(cfg.n_heads); ++hd) {
      Mat<T>& s = lt.probs[hd];
      s.noalias() = lt.q.middleCols(hd * dh, dh) * lt.k.middleCols(hd * dh, dh).transpose();
      s *= scale;
      for (Eigen::Index i = 0; i < n; ++i) {
        const T m = s.row(i).head(i + 1).maxCoeff();
        T sum = 0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          s(i, j) = std::exp(s(i, j) - m);
          sum += s(i, j);
        }
        s.row(i).head(i + 1) /= sum;
        for (Eigen::Index j = i + 1; j < n; ++j) s(i, j) = 0;
      }
      lt.attn.middleCols(hd * dh, dh).noalias() = s * lt.v.middleCols(hd * dh, dh);
    }
    x.noalias() += lt.attn * lp.wo;
    layer_norm<T>(x, lp.ln2_gain, lp.ln2_bias, lt.a2, &lt.ln2);
    lt.h_pre.noalias() = lt.a2 * lp.w1;
    lt.h_pre.rowwise() += lp.b1.row(0);
    lt.h_act = lt.h_pre.unaryExpr([](T z) { return gelu(z); });
    x.noalias() += lt.h_act * lp.w2;
    x.rowwise() += lp.b2.row(0);
  }
  layer_norm<T>(x, p.final_gain, p.final_bias, tr.final_out, &tr.final_stats);

  tr.rows.clear();
  tr.targets.clear();
  tr.weights.clear();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (weights[i] != T(0)) {
      tr.rows.push_back(i);
      tr.targets.push_back(targets[i]);
      tr.weights.push_back(weights[i]);
    }
  }
  check_ids(cfg, tr.targets);
  const Eigen::Index r = static_cast<Eigen::Index>(tr.rows.size());
  Mat<T> selected(r, d);
  for (Eigen::Index i = 0; i < r; ++i) selected.row(i) = tr.final_out.row(tr.rows[i]);
  tr.probs.noalias() = selected * p.lm_head;

  double loss = 0;
  for (Eigen::Index i = 0; i < r; ++i) {
    auto row = tr.probs.row(i);
    const T m = row.maxCoeff();
    row = (row.array() - m).exp();
    const double sum = static_cast<double>(row.sum());
    loss += static_cast<double>(tr.weights[i]) *
            -(std::log(static_cast<double>(row(tr.targets[i]))) - std::log(sum));
    row /= static_cast<T>(sum);
  }
  return loss;
}

template <typename T>
void sequence_backward(const Params<T>& p, const ModelConfig& cfg, const ForwardTrace<T>& tr, Params<T>* g,
                       RowMatrix<T>* d_input) {
  const Eigen::Index n = static_cast<Eigen::Index>(tr.tokens.size());
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const Eigen::Index r = static_cast<Eigen::Index>(tr.rows.size());

  Mat<T> dlogits = tr.probs;
  for (Eigen::Index i = 0; i < r; ++i) {
    dlogits(i, tr.targets[i]) -= T(1);
    dlogits.row(i) *= tr.weights[i];
  }
  Mat<T> dfinal = zeros<T>(n, d);
  {
    Mat<T> dsel = dlogits * p.lm_head.transpose();
    for (Eigen::Index i = 0; i < r; ++i) dfinal.row(tr.rows[i]) += dsel.row(i);
    if (g) {
      Mat<T> selected(r, d);
      for (Eigen::Index i = 0; i < r; ++i) selected.row(i) = tr.final_out.row(tr.rows[i]);
      g->lm_head.noalias() += selected.transpose() * dlogits;
    }
  }
  Mat<T> dx = zeros<T>(n, d);
  layer_norm_backward<T>(dfinal, tr.final_stats, p.final_gain, dx, g ? &g->final_gain : nullptr,
                         g ? &g->final_bias : nullptr);

  Mat<T> dh_act, da, dattn, dq(n, d), dk(n, d), dv(n, d), dp, ds;
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& lt = tr.layers[li];
    LayerParams<T>* lg = g ? &g->layers[li] : nullptr;

    // MLP block
    dh_act.noalias() = dx * lp.w2.transpose();
    if (lg) {
      lg->w2.noalias() += lt.h_act.transpose() * dx;
      lg->b2.row(0) += dx.colwise().sum();
    }
    dh_act = dh_act.cwiseProduct(lt.h_pre.unaryExpr([](T z) { return gelu_grad(z); }));
    if (lg) {
      lg->w1.noalias() += lt.a2.transpose() * dh_act;
      lg->b1.row(0) += dh_act.colwise().sum();
    }
    da.noalias() = dh_act * lp.w1.transpose();
    layer_norm_backward<T>(da, lt.ln2, lp.ln2_gain, dx, lg ? &lg->ln2_gain : nullptr, lg ? &lg->ln2_bias : nullptr);

    // Attention block
    dattn.noalias() = dx * lp.wo.transpose();
    if (lg) lg->wo.noalias() += lt.attn.transpose() * dx;
    for (Eigen::Index hd = 0; hd < static_cast<Eigen::Index>(cfg.n_heads); ++hd) {
      const Mat<T>& prob = lt.probs[hd];
      const auto d_out = dattn.middleCols(hd * dh, dh);
      dp.noalias() = d_out * lt.v.middleCols(hd * dh, dh).transpose();
      dv.middleCols(hd * dh, dh).noalias() = prob.transpose() * d_out;
      ds.resize(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const T dot = (dp.row(i).head(i + 1).array() * prob.row(i).head(i + 1).array()).sum();
        ds.row(i) = prob.row(i).array() * (dp.row(i).array() - dot) * scale;
      }
      dq.middleCols(hd * dh, dh).noalias() = ds * lt.k.middleCols(hd * dh, dh);
      dk.middleCols(hd * dh, dh).noalias() = ds.transpose() * lt.q.middleCols(hd * dh, dh);
    }
    if (lg) {
      lg->wq.noalias() += lt.a1.transpose() * dq;
      lg->wk.noalias() += lt.a1.transpose() * dk;
      lg->wv.noalias() += lt.a1.transpose() * dv;
    }
    da.noalias() = dq * lp.wq.transpose();
    da.noalias() += dk * lp.wk.transpose();
    da.noalias() += dv * lp.wv.transpose();
    layer_norm_backward<T>(da, lt.ln1, lp.ln1_gain, dx, lg ? &lg->ln1_gain : nullptr, lg ? &lg->ln1_bias : nullptr);
  }

  if (g) {
    for (Eigen::Index i = 0; i < n; ++i) {
      g->tok_emb.row(tr.tokens[i]) += dx.row(i);
      g->pos_emb.row(i) += dx.row(i);
    }
  }
  if (d_input) *d_input = std::move(dx);
}

template <typename T>
TraceBuffer<T>::TraceBuffer() : trace_(std::make_unique<ForwardTrace<T>>()) {}
template <typename T>
TraceBuffer<T>::~TraceBuffer() = default;
template <typename T>
TraceBuffer<T>::TraceBuffer(TraceBuffer&&) noexcept = default;
template <typename T>
TraceBuffer<T>& TraceBuffer<T>::operator=(TraceBuffer&&) noexcept = default;

// ---------------------------------------------------------------- ops

template <typename T>
double nll(const BasicModel<T>& model, std::span<const TokenId> context, std::span<const TokenId> target) {
  if (target.empty()) throw InvalidArgument("nll: empty target");
  if (context.empty()) throw InvalidArgument("nll: empty context");
  Tokens input(context.begin(), context.end());
  input.insert(input.end(), target.begin(), target.end() - 1);
  model.check_tokens(input);
  check_ids(model.config(), target);
  const RowMatrix<T> logits = model.forward(input);
  double loss = 0;
  const std::size_t first = context.size() - 1;
  for (std::size_t j = 0; j < target.size(); ++j) {
    loss -= log_prob(logits.row(static_cast<Eigen::Index>(first + j)), target[j]);
  }
  return loss;
}

template <typename T>
RowMatrix<T> input_onehot_gradient(const BasicModel<T>& model, std::span<const TokenId> system_prompt,
                                   std::span<const TokenId> prompt, std::span<const TokenId> response,
                                   std::size_t span_begin, std::size_t span_end) {
  if (span_begin >= span_end || span_end > prompt.size()) {
    throw InvalidArgument("gradient span [" + std::to_string(span_begin) + ", " + std::to_string(span_end) +
                          ") outside prompt of length " + std::to_string(prompt.size()));
  }
  if (response.empty()) throw InvalidArgument("gradient needs a non-empty response");
  const std::uint32_t vocab = model.vocab();
  Tokens seq = frame_prompt(system_prompt, prompt, vocab);
  const std::size_t context_len = seq.size();
  seq.insert(seq.end(), response.begin(), response.end());
  model.check_tokens(seq);

  const std::size_t n = seq.size() - 1;
  Tokens input(seq.begin(), seq.end() - 1);
  Tokens targets(seq.begin() + 1, seq.end());
  std::vector<T> weights(n, T(0));
  for (std::size_t i = context_len - 1; i < n; ++i) weights[i] = T(1);

  ForwardTrace<T> trace;
  sequence_loss<T>(model.params(), model.config(), input, targets, weights, &trace);
  RowMatrix<T> d_input;
  sequence_backward<T>(model.params(), model.config(), trace, nullptr, &d_input);

  const auto offset = static_cast<Eigen::Index>(prompt_offset(system_prompt.size(), vocab) + span_begin);
  const auto rows = static_cast<Eigen::Index>(span_end - span_begin);
  return d_input.middleRows(offset, rows) * model.params().tok_emb.transpose();
}

Tokens greedy_decode(const Model& model, std::span<const TokenId> context, std::size_t resp_len) {
  if (resp_len == 0) throw InvalidArgument("resp_len must be >= 1");
  if (context.empty()) throw InvalidArgument("greedy_decode: empty context");
  check_context(model.config(), context.size() + resp_len);
  KvCache<float> cache = model.empty_cache();
  auto logits = model.extend(cache, context);
  Tokens out;
  out.reserve(resp_len);
  for (std::size_t j = 0; j < resp_len; ++j) {
    const TokenId next = argmax_lowest(logits);
    out.push_back(next);
    if (j + 1 < resp_len) {
      const TokenId one[1] = {next};
      logits = model.extend(cache, one);
    }
  }
  return out;
}

Tokens greedy_decode(const Model& model, std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                     std::size_t resp_len) {
  return greedy_decode(model, frame_prompt(system_prompt, prompt, model.vocab()), resp_len);
}

Tokens sample_decode(const Model& model, std::span<const TokenId> context, std::size_t resp_len, double temperature,
                     std::uint64_t seed) {
  if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be >= 0");
  if (temperature == 0.0) return greedy_decode(model, context, resp_len);
  if (resp_len == 0) throw InvalidArgument("resp_len must be >= 1");
  if (context.empty()) throw InvalidArgument("sample_decode: empty context");
  check_context(model.config(), context.size() + resp_len);
  Rng rng(seed);
  KvCache<float> cache = model.empty_cache();
  auto logits = model.extend(cache, context);
  Tokens out;
  out.reserve(resp_len);
  std::vector<double> weights(model.vocab());
  for (std::size_t j = 0; j < resp_len; ++j) {
    const double m = static_cast<double>(logits.maxCoeff());
    double total = 0;
    for (std::size_t t = 0; t < weights.size(); ++t) {
      weights[t] = std::exp((static_cast<double>(logits(static_cast<Eigen::Index>(t))) - m) / temperature);
      total += weights[t];
    }
    const double u = rng.uniform() * total;
    double acc = 0;
    TokenId next = 0;
    for (std::size_t t = 0; t < weights.size(); ++t) {
      if (weights[t] <= 0) continue;
      next = static_cast<TokenId>(t);
      acc += weights[t];
      if (u < acc) break;
    }
    out.push_back(next);
    if (j + 1 < resp_len) {
      const TokenId one[1] = {next};
      logits = model.extend(cache, one);
    }
  }
  return out;
}

Tokens sample_decode(const Model& model, std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                     std::size_t resp_len, double temperature, std::uint64_t seed) {
  return sample_decode(model, frame_prompt(system_prompt, prompt, model.vocab()), resp_len, temperature, seed);
}

TokenId bottom_k_next(const Model& model, std::span<const TokenId> prefix, std::size_t k, std::uint64_t seed,
                      std::uint32_t candidate_limit) {
  const std::uint32_t limit = candidate_limit == 0 ? model.vocab() : std::min(candidate_limit, model.vocab());
  if (k < 1 || k > limit) {
    throw InvalidArgument("bottom-k: k=" + std::to_string(k) + " outside [1, " + std::to_string(limit) + "]");
  }
  if (prefix.empty()) throw InvalidArgument("bottom-k: empty prefix");
  KvCache<float> cache = model.empty_cache();
  const auto logits = model.extend(cache, prefix);
  std::vector<TokenId> ids(limit);
  std::iota(ids.begin(), ids.end(), TokenId{0});
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) {
                      const float la = logits(a);
                      const float lb = logits(b);
                      return la != lb ? la < lb : a < b;
                    });
  Rng rng(seed);
  return ids[rng.index(k)];
}

double perplexity(const Model& model, std::span<const TokenId> tokens) {
  if (tokens.size() < 2) throw InvalidArgument("perplexity needs at least 2 tokens");
  const std::size_t window = model.config().ctx_len;
  if (window < 2) throw InvalidArgument("perplexity needs ctx_len >= 2");
  double total = 0;
  std::size_t count = 0;
  // Windows overlap by one token so every token after the first is predicted exactly once.
  for (std::size_t start = 0; start + 1 < tokens.size(); start += window - 1) {
    const std::size_t len = std::min(window, tokens.size() - start);
    const auto chunk = tokens.subspan(start, len);
    const RowMatrix<float> logits = model.forward(chunk.first(len - 1));
    for (std::size_t i = 0; i + 1 < len; ++i) {
      total -= log_prob(logits.row(static_cast<Eigen::Index>(i)), chunk[i + 1]);
      ++count;
    }
  }
  return std::exp(total / static_cast<double>(count));
}

double perplexity(const Model& model, std::string_view text) {
  const Tokens tokens = tokenize(text);
  return perplexity(model, std::span<const TokenId>(tokens));
}

// ---------------------------------------------------------------- instantiations

#define ROFL_INSTANTIATE(T)                                                                                       \
  template struct Params<T>;                                                                                      \
  template Params<T> params_from_checkpoint<T>(const Checkpoint&);                                                \
  template Checkpoint checkpoint_from_params<T>(const Params<T>&, const ModelConfig&);                            \
  template class BasicModel<T>;                                                                                   \
  template class TraceBuffer<T>;                                                                                  \
  template double sequence_loss<T>(const Params<T>&, const ModelConfig&, std::span<const TokenId>,                \
                                   std::span<const TokenId>, std::span<const T>, ForwardTrace<T>*);               \
  template void sequence_backward<T>(const Params<T>&, const ModelConfig&, const ForwardTrace<T>&, Params<T>*,    \
                                     RowMatrix<T>*);                                                              \
  template double nll<T>(const BasicModel<T>&, std::span<const TokenId>, std::span<const TokenId>);               \
  template RowMatrix<T> input_onehot_gradient<T>(const BasicModel<T>&, std::span<const TokenId>,                  \
                                                 std::span<const TokenId>, std::span<const TokenId>, std::size_t, \
                                                 std::size_t);

ROFL_INSTANTIATE(float)
ROFL_INSTANTIATE(double)

#undef ROFL_INSTANTIATE

}  // namespace rofl
