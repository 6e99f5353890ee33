#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rofl/checkpoint.hpp"
#include "rofl/digest.hpp"
#include "rofl/tokens.hpp"

namespace rofl::testing {

using Matrix = std::vector<std::vector<double>>;

// Straight-line double-precision forward pass that reads tensors by name from
// the checkpoint. Shares no code with the library model.
// embed_offset, when non-empty, is added to the input embedding of each
// position ([len x d]); used for finite differences along embedding directions.
Matrix reference_forward(const Checkpoint& ckpt, const Tokens& tokens, const Matrix& embed_offset = {});

// -log p(target | context), with optional embedding offsets over context ++ target[:-1].
double reference_nll(const Checkpoint& ckpt, const Tokens& context, const Tokens& target,
                     const Matrix& embed_offset = {});

// Softmax of one logit row.
std::vector<double> softmax(const std::vector<double>& row);

// Among all V^n continuations, the unique one in which every token is the
// (lowest-id) argmax given everything before it.
Tokens brute_force_greedy(const Checkpoint& ckpt, const Tokens& context, std::size_t n);

// 1-layer, 1-head, d_model = 2, V = 2 model with small hand-picked weights.
Checkpoint hand_model(std::uint32_t ctx_len = 8);

// Random model whose weights are drawn with the given stddev (default init
// scale is too small to produce interesting logits).
Checkpoint random_model(const ModelConfig& cfg, std::uint64_t seed, double stddev = 0.3);

// Model whose logits are identically zero (lm_head = 0).
Checkpoint uniform_model(const ModelConfig& cfg);

// Independent FIPS 180-4 SHA-256.
Digest reference_sha256(const std::string& bytes);

}  // namespace rofl::testing
