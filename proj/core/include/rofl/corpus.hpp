#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rofl/train.hpp"

namespace rofl::corpus {

// Deterministic synthetic English used as desk-scale training text. Each slice
// draws from its own topic vocabulary, so different slices are disjoint in content.
inline constexpr std::uint32_t kSliceCount = 4;
std::string text_slice(std::uint32_t slice, std::size_t bytes, std::uint64_t seed = 0);

// Five instruction-following datasets with distinct task types, framed as
// (instruction, response) pairs. Roughly `bytes` of text each.
inline constexpr std::uint32_t kDatasetCount = 5;
SftDataset instruction_dataset(std::uint32_t index, std::size_t bytes, std::uint64_t seed = 0);
std::string dataset_name(std::uint32_t index);
// Index for a dataset name or a decimal index; throws InvalidArgument otherwise.
std::uint32_t dataset_index(const std::string& name);

// Single natural-language sentences (held-out stream of slice 0's topic).
std::vector<std::string> natural_prompts(std::size_t count, std::uint64_t seed = 0);

}  // namespace rofl::corpus
