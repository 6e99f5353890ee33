#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rofl/checkpoint.hpp"
#include "rofl/train.hpp"

namespace rofl {

struct NamedDataset {
  std::string name;
  SftDataset examples;
};

struct Derivative {
  std::string tag;  // "sft:<dataset>", "lora:r<rank>:<dataset>", "quant:<bits>", "stage:<i>"
  Checkpoint checkpoint;
};

struct LineageRegistry {
  Checkpoint base;
  std::vector<Derivative> derivatives;
  std::vector<Checkpoint> irrelevant;

  const Derivative& find(std::string_view tag) const;  // throws InvalidArgument
};

struct SuiteRecipe {
  TrainConfig sft;                      // epochs defaults to 3
  std::uint32_t lora_rank = 4;          // 0 disables LoRA derivatives
  TrainConfig lora;
  std::vector<std::uint32_t> quant_bits;
};

// One SFT derivative per dataset, one LoRA derivative per dataset (when
// lora_rank > 0) and one quantized copy of the base per entry of quant_bits.
LineageRegistry build_suite(const Checkpoint& base, const std::vector<NamedDataset>& datasets,
                            const SuiteRecipe& recipe);

// Stage i = sft_finetune(stage i-1, datasets[i]); stage 0 starts from base.
std::vector<Checkpoint> multi_stage(const Checkpoint& base, const std::vector<NamedDataset>& datasets,
                                    const TrainConfig& tcfg);

// Bundled system prompts: "empty", "vicuna", "basic", "filter1", "filter2",
// "basic+filter1", "basic+filter2".
std::vector<std::string> system_prompt_names();
std::string system_prompt_text(std::string_view name);
Tokens system_prompt(std::string_view name);
std::vector<Tokens> system_prompt_variants(const std::vector<std::string>& names);

// Manifest lines: "<tag>\t<checkpoint path>\t<lineage hex>\n". The base is
// tagged "base" and irrelevant models "irrelevant:<i>".
struct ManifestEntry {
  std::string tag;
  std::filesystem::path path;
  Digest lineage{};
};

std::string format_manifest(const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> parse_manifest(std::string_view text);

// Writes every checkpoint into dir plus dir/manifest.tsv; returns the manifest path.
std::filesystem::path save_registry(const LineageRegistry& registry, const std::filesystem::path& dir);
// Loads checkpoints listed in a manifest (relative paths resolve against its directory)
// and checks each lineage id against the manifest.
LineageRegistry load_registry(const std::filesystem::path& manifest);

}  // namespace rofl
