#include "rofl/quantize.hpp"

#include <algorithm>
#include <cmath>

#include "rofl/error.hpp"

namespace rofl {

float quant_scale(std::span<const float> values, std::uint32_t bits) {
  float max_abs = 0.0f;
  for (float v : values) max_abs = std::max(max_abs, std::fabs(v));
  const float levels = static_cast<float>((1u << (bits - 1)) - 1u);
  return max_abs / levels;
}

Checkpoint quantize(const Checkpoint& ckpt, std::uint32_t bits) {
  if (bits != 16 && bits != 8 && bits != 4) {
    throw InvalidArgument("unsupported quantization width " + std::to_string(bits) + " (expected 16, 8 or 4)");
  }
  if (ckpt.quant_bits != 32) throw InvalidArgument("quantize expects a 32-bit checkpoint");
  Checkpoint out = ckpt;
  out.quant_bits = bits;
  const float levels = static_cast<float>((1u << (bits - 1)) - 1u);
  for (auto& [name, tensor] : out.tensors) {
    const float scale = quant_scale(tensor.data, bits);
    if (scale == 0.0f) continue;
    for (float& v : tensor.data) {
      const float q = std::clamp(std::nearbyint(v / scale), -levels, levels);
      v = q * scale;
    }
  }
  return out;
}

}  // namespace rofl
