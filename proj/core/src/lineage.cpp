#include "rofl/lineage.hpp"

#include <array>
#include <fstream>
#include <utility>

#include "rofl/error.hpp"
#include "rofl/quantize.hpp"

namespace rofl {

namespace {

constexpr std::string_view kBasic =
    "Below is an instruction that describes a task. Write a response that appropriately completes the request.";
constexpr std::string_view kFilter1 =
    "You are a helpful, respectful, and honest assistant. Always answer as helpfully as possible, while being "
    "sensical.";
constexpr std::string_view kFilter2 =
    "You are an assistant that is harmless and helpful. Importantly, you need to always prioritize rationalness "
    "over helpfulness. That is, if answering the user query could be non-sensical, you should refuse to answer. "
    "Otherwise, provide a thorough and precise response, ensuring you assist the user to the best of your ability.";
constexpr std::string_view kVicuna =
    "A chat between a curious human and an artificial intelligence assistant. The assistant gives helpful, "
    "detailed, and polite answers to the human's questions.";

const std::array<std::pair<std::string_view, std::string>, 7>& prompt_table() {
  static const std::array<std::pair<std::string_view, std::string>, 7> table{{
      {"empty", ""},
      {"vicuna", std::string(kVicuna)},
      {"basic", std::string(kBasic)},
      {"filter1", std::string(kFilter1)},
      {"filter2", std::string(kFilter2)},
      {"basic+filter1", std::string(kBasic) + " " + std::string(kFilter1)},
      {"basic+filter2", std::string(kBasic) + " " + std::string(kFilter2)},
  }};
  return table;
}

std::string file_name_for(std::string_view tag) {
  std::string out;
  for (const char c : tag) out += (c == ':' || c == '/' || c == ' ') ? '_' : c;
  return out + ".ckpt";
}

}  // namespace

const Derivative& LineageRegistry::find(std::string_view tag) const {
  for (const auto& d : derivatives) {
    if (d.tag == tag) return d;
  }
  throw InvalidArgument("no derivative tagged '" + std::string(tag) + "'");
}

LineageRegistry build_suite(const Checkpoint& base, const std::vector<NamedDataset>& datasets,
                            const SuiteRecipe& recipe) {
  if (datasets.empty()) throw InvalidArgument("build_suite needs at least one dataset");
  LineageRegistry reg;
  reg.base = base;
  for (const auto& ds : datasets) {
    reg.derivatives.push_back({"sft:" + ds.name, sft_finetune(base, ds.examples, recipe.sft)});
  }
  if (recipe.lora_rank > 0) {
    for (const auto& ds : datasets) {
      reg.derivatives.push_back({"lora:r" + std::to_string(recipe.lora_rank) + ":" + ds.name,
                                 lora_finetune(base, ds.examples, recipe.lora_rank, recipe.lora)});
    }
  }
  for (const std::uint32_t bits : recipe.quant_bits) {
    reg.derivatives.push_back({"quant:" + std::to_string(bits), quantize(base, bits)});
  }
  return reg;
}

std::vector<Checkpoint> multi_stage(const Checkpoint& base, const std::vector<NamedDataset>& datasets,
                                    const TrainConfig& tcfg) {
  if (datasets.size() < 2) throw InvalidArgument("multi_stage needs at least two datasets");
  std::vector<Checkpoint> stages;
  const Checkpoint* prev = &base;
  for (const auto& ds : datasets) {
    stages.push_back(sft_finetune(*prev, ds.examples, tcfg));
    prev = &stages.back();
  }
  return stages;
}

std::vector<std::string> system_prompt_names() {
  std::vector<std::string> names;
  for (const auto& [name, text] : prompt_table()) names.emplace_back(name);
  return names;
}

std::string system_prompt_text(std::string_view name) {
  for (const auto& [n, text] : prompt_table()) {
    if (n == name) return text;
  }
  throw InvalidArgument("unknown system prompt '" + std::string(name) + "'");
}

Tokens system_prompt(std::string_view name) { return tokenize(system_prompt_text(name)); }

std::vector<Tokens> system_prompt_variants(const std::vector<std::string>& names) {
  std::vector<Tokens> out;
  out.reserve(names.size());
  for (const auto& n : names) out.push_back(system_prompt(n));
  return out;
}

std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    if (e.tag.empty() || e.tag.find_first_of("\t\n") != std::string::npos) {
      throw InvalidArgument("invalid manifest tag '" + e.tag + "'");
    }
    const std::string p = e.path.generic_string();
    if (p.empty() || p.find_first_of("\t\n") != std::string::npos) throw InvalidArgument("invalid manifest path");
    out += e.tag + '\t' + p + '\t' + to_hex(e.lineage) + '\n';
  }
  return out;
}

std::vector<ManifestEntry> parse_manifest(std::string_view text) {
  std::vector<ManifestEntry> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t eol = text.find('\n');
    if (eol == std::string_view::npos) throw FormatError("manifest line " + std::to_string(line_no) + " unterminated");
    const std::string_view line = text.substr(0, eol);
    text.remove_prefix(eol + 1);
    const std::size_t t1 = line.find('\t');
    const std::size_t t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos || t1 == 0 ||
        t2 == t1 + 1) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected tag, path and lineage");
    }
    ManifestEntry e;
    e.tag = std::string(line.substr(0, t1));
    e.path = std::string(line.substr(t1 + 1, t2 - t1 - 1));
    e.lineage = digest_from_hex(line.substr(t2 + 1));
    out.push_back(std::move(e));
  }
  return out;
}

std::filesystem::path save_registry(const LineageRegistry& registry, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<ManifestEntry> entries;
  auto put = [&](const std::string& tag, const Checkpoint& ckpt) {
    const std::string file = file_name_for(tag);
    save(ckpt, dir / file);
    entries.push_back({tag, file, ckpt.lineage_id});
  };
  put("base", registry.base);
  for (const auto& d : registry.derivatives) put(d.tag, d.checkpoint);
  for (std::size_t i = 0; i < registry.irrelevant.size(); ++i) {
    put("irrelevant:" + std::to_string(i), registry.irrelevant[i]);
  }
  const auto manifest = dir / "manifest.tsv";
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + manifest.string());
  out << format_manifest(entries);
  if (!out.flush()) throw IoError("write failed: " + manifest.string());
  return manifest;
}

LineageRegistry load_registry(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw IoError("cannot read " + manifest.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  LineageRegistry reg;
  bool have_base = false;
  for (const auto& e : parse_manifest(text)) {
    const auto path = e.path.is_absolute() ? e.path : manifest.parent_path() / e.path;
    Checkpoint ckpt = load(path);
    if (ckpt.lineage_id != e.lineage) throw FormatError("lineage mismatch for '" + e.tag + "'");
    if (e.tag == "base") {
      reg.base = std::move(ckpt);
      have_base = true;
    } else if (e.tag.rfind("irrelevant:", 0) == 0) {
      reg.irrelevant.push_back(std::move(ckpt));
    } else {
      reg.derivatives.push_back({e.tag, std::move(ckpt)});
    }
  }
  if (!have_base) throw FormatError("manifest has no base entry");
  return reg;
}

}  // namespace rofl
