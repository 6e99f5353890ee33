#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rofl/checkpoint.hpp"
#include "rofl/tokens.hpp"

namespace rofl {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct LayerParams {
  RowMatrix<T> ln1_gain, ln1_bias;
  RowMatrix<T> wq, wk, wv, wo;  // [d x d], applied as x * W
  RowMatrix<T> ln2_gain, ln2_bias;
  RowMatrix<T> w1, b1;  // [d x 4d], [1 x 4d]
  RowMatrix<T> w2, b2;  // [4d x d], [1 x d]
};

// Pre-norm GPT-style decoder: learned token + position embeddings, LayerNorm,
// causal multi-head attention, GELU MLP, untied output head.
template <typename T>
struct Params {
  RowMatrix<T> tok_emb;  // [V x d]
  RowMatrix<T> pos_emb;  // [ctx x d]
  std::vector<LayerParams<T>> layers;
  RowMatrix<T> final_gain, final_bias;
  RowMatrix<T> lm_head;  // [d x V]

  // Calls fn(name, matrix) once per tensor, in a fixed order.
  void visit(const std::function<void(const std::string&, RowMatrix<T>&)>& fn);
  void visit(const std::function<void(const std::string&, const RowMatrix<T>&)>& fn) const;

  static Params zeros_like(const ModelConfig& config);
};

template <typename T>
Params<T> params_from_checkpoint(const Checkpoint& ckpt);

// Writes params into a checkpoint with the given config (float storage).
template <typename T>
Checkpoint checkpoint_from_params(const Params<T>& params, const ModelConfig& config);

// Attention key/value cache for incremental evaluation.
template <typename T>
struct KvCache {
  std::size_t length = 0;
  std::vector<RowMatrix<T>> keys;    // per layer [ctx x d]
  std::vector<RowMatrix<T>> values;  // per layer [ctx x d]
};

// Saved activations of one sequence, consumed by backward().
template <typename T>
struct ForwardTrace;

template <typename T>
class BasicModel {
 public:
  explicit BasicModel(Checkpoint ckpt);

  const ModelConfig& config() const { return ckpt_.config; }
  const Checkpoint& checkpoint() const { return ckpt_; }
  const Params<T>& params() const { return params_; }
  std::uint32_t vocab() const { return ckpt_.config.vocab; }

  // Logits for every position, [len x V]. Throws ContextOverflow / InvalidToken.
  RowMatrix<T> forward(std::span<const TokenId> tokens) const;

  KvCache<T> empty_cache() const;

  // Appends tokens to the cache and returns the logits of the last new position.
  Eigen::Matrix<T, 1, Eigen::Dynamic> extend(KvCache<T>& cache, std::span<const TokenId> tokens) const;

  // Sum of -log p(targets) for a continuation of a cached prefix. The tail is
  // tail_tokens; position i of the tail (i.e. prefix.length + i) predicts
  // targets[i] when weights[i] != 0. Does not modify the cache.
  double tail_nll(const KvCache<T>& prefix, std::span<const TokenId> tail_tokens,
                  std::span<const TokenId> targets, std::span<const std::uint8_t> mask) const;

  void check_tokens(std::span<const TokenId> tokens, std::size_t offset = 0) const;

 private:
  Checkpoint ckpt_;
  Params<T> params_;
};

using Model = BasicModel<float>;

// Differentiable single-sequence pass used by training and gradient ops.
// loss = sum_i weights[i] * -log softmax(logits_i)[targets[i]] over positions with
// weights[i] != 0. trace may be null when no backward pass follows.
template <typename T>
double sequence_loss(const Params<T>& params, const ModelConfig& config,
                     std::span<const TokenId> tokens, std::span<const TokenId> targets,
                     std::span<const T> weights, ForwardTrace<T>* trace);

// Accumulates d(loss)/d(params) into grads (if non-null) and writes
// d(loss)/d(input embeddings) [len x d] into d_input (if non-null).
template <typename T>
void sequence_backward(const Params<T>& params, const ModelConfig& config, const ForwardTrace<T>& trace,
                       Params<T>* grads, RowMatrix<T>* d_input);

// Owning wrapper so callers outside the implementation can hold a trace.
template <typename T>
class TraceBuffer {
 public:
  TraceBuffer();
  ~TraceBuffer();
  TraceBuffer(TraceBuffer&&) noexcept;
  TraceBuffer& operator=(TraceBuffer&&) noexcept;
  ForwardTrace<T>* get() { return trace_.get(); }
  const ForwardTrace<T>& operator*() const { return *trace_; }

 private:
  std::unique_ptr<ForwardTrace<T>> trace_;
};

// -sum_j log p(target_j | context, target_<j). Throws on empty target/context.
template <typename T>
double nll(const BasicModel<T>& model, std::span<const TokenId> context, std::span<const TokenId> target);

// d(-log p(y | frame(h, x))) / d(one-hot input) for positions span_begin..span_end
// of x, shape [span x V]. Entry (i, t) is the directional derivative of the loss
// when token t's embedding is mixed into position i.
template <typename T>
RowMatrix<T> input_onehot_gradient(const BasicModel<T>& model, std::span<const TokenId> system_prompt,
                                   std::span<const TokenId> prompt, std::span<const TokenId> response,
                                   std::size_t span_begin, std::size_t span_end);

// Argmax decoding, ties to the lowest id.
Tokens greedy_decode(const Model& model, std::span<const TokenId> context, std::size_t resp_len);
Tokens greedy_decode(const Model& model, std::span<const TokenId> system_prompt,
                     std::span<const TokenId> prompt, std::size_t resp_len);

// Multinomial sampling from softmax(logits / temperature); temperature 0 is greedy.
Tokens sample_decode(const Model& model, std::span<const TokenId> context, std::size_t resp_len,
                     double temperature, std::uint64_t seed);
Tokens sample_decode(const Model& model, std::span<const TokenId> system_prompt,
                     std::span<const TokenId> prompt, std::size_t resp_len, double temperature,
                     std::uint64_t seed);

// Token drawn uniformly among the k least probable next tokens (ties: lowest
// id counts as less probable). Only ids < candidate_limit are considered;
// 0 means the full vocabulary.
TokenId bottom_k_next(const Model& model, std::span<const TokenId> prefix, std::size_t k, std::uint64_t seed,
                      std::uint32_t candidate_limit = 0);

// exp(mean next-token NLL) over text, each byte predicting the next.
double perplexity(const Model& model, std::string_view text);
double perplexity(const Model& model, std::span<const TokenId> tokens);

}  // namespace rofl
