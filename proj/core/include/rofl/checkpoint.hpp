#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rofl/digest.hpp"
#include "rofl/tokens.hpp"

namespace rofl {

struct ModelConfig {
  std::uint32_t vocab = kVocabSize;
  std::uint32_t d_model = 128;
  std::uint32_t n_layers = 2;
  std::uint32_t n_heads = 4;
  std::uint32_t ctx_len = 512;
  std::uint32_t seed = 0;

  std::uint32_t d_ff() const { return 4 * d_model; }
  std::uint32_t head_dim() const { return d_model / n_heads; }

  // Throws InvalidArgument on a zero dimension or d_model % n_heads != 0.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Tensor {
  std::vector<std::uint32_t> shape;
  std::vector<float> data;

  std::size_t size() const { return data.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Serialized model: config + named tensors. Immutable once built by train/finetune/quantize.
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;  // name-ordered; the order is part of the format
  std::uint32_t quant_bits = 32;
  Digest lineage_id{};

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Tensor names and shapes for a config, in canonical order.
std::map<std::string, std::vector<std::uint32_t>> tensor_layout(const ModelConfig& config);

// Deterministic initialization from config.seed (lineage_id left zero).
Checkpoint init_checkpoint(const ModelConfig& config);

// Checks tensor set/shapes against config and that every value is finite.
void validate_checkpoint(const Checkpoint& ckpt);

// Binary format:
//   "ROFLM1\0\0"; u32 vocab, d_model, n_layers, n_heads, ctx_len, quant_bits, seed;
//   lineage (32 bytes); u32 tensor count; per tensor: u32 name len, name, u32 rank,
//   u32 dims..., f32 data row-major. All integers and floats little-endian.
std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::string_view bytes);

void save(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load(const std::filesystem::path& path);

// SHA-256 of serialize(ckpt).
Digest weights_digest(const Checkpoint& ckpt);

// SHA-256 over the tensor section only (count + tensors). A base model's lineage id.
Digest tensors_digest(const Checkpoint& ckpt);

}  // namespace rofl
