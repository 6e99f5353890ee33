#pragma once

#include <cstdint>
#include <span>

#include "rofl/checkpoint.hpp"

namespace rofl {

// Symmetric per-tensor quantize-dequantize of every tensor:
//   scale = max|w| / (2^(bits-1) - 1),  w' = round(w / scale) * scale.
// Storage stays 32-bit; quant_bits records the setting. bits in {16, 8, 4}.
Checkpoint quantize(const Checkpoint& ckpt, std::uint32_t bits);

// Scale used for a tensor at the given width (0 for an all-zero tensor).
float quant_scale(std::span<const float> values, std::uint32_t bits);

}  // namespace rofl
