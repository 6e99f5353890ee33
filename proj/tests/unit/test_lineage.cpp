#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "rofl/corpus.hpp"
#include "rofl/error.hpp"
#include "rofl/lineage.hpp"

using namespace rofl;
using namespace rofl::testing;

namespace {

Checkpoint micro_base(std::uint32_t seed = 0) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.ctx_len = 160;  // room for the longest instruction example
  c.seed = seed;
  TrainConfig t;
  t.steps = 10;
  t.batch_size = 2;
  t.warmup_steps = 2;
  return train(c, corpus::text_slice(0, 4000), t);
}

std::vector<NamedDataset> micro_datasets() {
  return {{"capitals", corpus::instruction_dataset(0, 300)}, {"reverse", corpus::instruction_dataset(1, 300)}};
}

SuiteRecipe micro_recipe() {
  SuiteRecipe r;
  r.sft.epochs = 1;
  r.sft.learning_rate = 1e-3;
  r.sft.warmup_steps = 1;
  r.lora = r.sft;
  r.lora_rank = 2;
  r.quant_bits = {8, 4};
  return r;
}

}  // namespace

TEST(SystemPrompts, NamesAndCompositions) {
  EXPECT_EQ(system_prompt_names(),
            (std::vector<std::string>{"empty", "vicuna", "basic", "filter1", "filter2", "basic+filter1",
                                      "basic+filter2"}));
  EXPECT_EQ(system_prompt_text("empty"), "");
  EXPECT_EQ(system_prompt_text("basic"),
            "Below is an instruction that describes a task. Write a response that appropriately completes the request.");
  EXPECT_EQ(system_prompt_text("vicuna"),
            "A chat between a curious human and an artificial intelligence assistant. The assistant gives helpful, "
            "detailed, and polite answers to the human's questions.");
  EXPECT_EQ(system_prompt_text("basic+filter1"), system_prompt_text("basic") + " " + system_prompt_text("filter1"));
  EXPECT_EQ(system_prompt_text("basic+filter2"), system_prompt_text("basic") + " " + system_prompt_text("filter2"));
  EXPECT_NE(system_prompt_text("filter1"), system_prompt_text("filter2"));
  EXPECT_EQ(system_prompt("basic"), tokenize(system_prompt_text("basic")));
  EXPECT_THROW(system_prompt_text("nope"), InvalidArgument);
  EXPECT_EQ(system_prompt_variants({"empty", "basic"}).size(), 2u);
}

TEST(Manifest, RoundTrip) {
  const std::vector<ManifestEntry> entries{{"base", "base.ckpt", sha256("a")},
                                           {"sft:capitals", "sub/sft_capitals.ckpt", sha256("a")}};
  const std::string text = format_manifest(entries);
  EXPECT_EQ(text, "base\tbase.ckpt\t" + to_hex(sha256("a")) + "\nsft:capitals\tsub/sft_capitals.ckpt\t" +
                      to_hex(sha256("a")) + "\n");
  const auto back = parse_manifest(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].tag, "sft:capitals");
  EXPECT_EQ(back[1].path, "sub/sft_capitals.ckpt");
  EXPECT_EQ(back[1].lineage, sha256("a"));
  EXPECT_THROW(parse_manifest("base\tx.ckpt\n"), FormatError);
  EXPECT_THROW(parse_manifest("base\tx.ckpt\t" + to_hex(sha256("a"))), FormatError);
  EXPECT_THROW(format_manifest({{"a\tb", "p", {}}}), InvalidArgument);
}

TEST(Suite, BuildsTaggedDerivativesInOrder) {
  const Checkpoint base = micro_base();
  const LineageRegistry reg = build_suite(base, micro_datasets(), micro_recipe());
  std::vector<std::string> tags;
  for (const auto& d : reg.derivatives) tags.push_back(d.tag);
  EXPECT_EQ(tags, (std::vector<std::string>{"sft:capitals", "sft:reverse", "lora:r2:capitals", "lora:r2:reverse",
                                            "quant:8", "quant:4"}));
  for (const auto& d : reg.derivatives) {
    EXPECT_EQ(d.checkpoint.lineage_id, base.lineage_id) << d.tag;
    EXPECT_NE(weights_digest(d.checkpoint), weights_digest(base)) << d.tag;
  }
  EXPECT_EQ(reg.find("quant:4").checkpoint.quant_bits, 4u);
  EXPECT_THROW(reg.find("sft:nope"), InvalidArgument);
  EXPECT_THROW(build_suite(base, {}, micro_recipe()), InvalidArgument);
}

TEST(Suite, MultiStageChainsFinetunes) {
  const Checkpoint base = micro_base();
  const auto ds = micro_datasets();
  TrainConfig t = micro_recipe().sft;
  const auto stages = multi_stage(base, ds, t);
  ASSERT_EQ(stages.size(), 2u);
  EXPECT_EQ(stages[0], sft_finetune(base, ds[0].examples, t));
  EXPECT_EQ(stages[1], sft_finetune(stages[0], ds[1].examples, t));
  EXPECT_THROW(multi_stage(base, {ds[0]}, t), InvalidArgument);
}

TEST(Suite, RegistrySaveLoadRoundTrip) {
  const Checkpoint base = micro_base();
  SuiteRecipe r = micro_recipe();
  r.lora_rank = 0;
  r.quant_bits = {8};
  LineageRegistry reg = build_suite(base, {micro_datasets()[0]}, r);
  reg.irrelevant.push_back(micro_base(7));

  TempDir dir;
  const auto manifest = save_registry(reg, dir.path());
  EXPECT_EQ(manifest, dir / "manifest.tsv");
  const auto entries = parse_manifest(read_file(manifest));
  ASSERT_EQ(entries.size(), 4u);
  EXPECT_EQ(entries[0].tag, "base");
  EXPECT_EQ(entries[1].tag, "sft:capitals");
  EXPECT_EQ(entries[1].path, "sft_capitals.ckpt");
  EXPECT_EQ(entries[3].tag, "irrelevant:0");

  const LineageRegistry back = load_registry(manifest);
  EXPECT_EQ(back.base, reg.base);
  ASSERT_EQ(back.derivatives.size(), reg.derivatives.size());
  for (std::size_t i = 0; i < reg.derivatives.size(); ++i) {
    EXPECT_EQ(back.derivatives[i].tag, reg.derivatives[i].tag);
    EXPECT_EQ(back.derivatives[i].checkpoint, reg.derivatives[i].checkpoint);
  }
  ASSERT_EQ(back.irrelevant.size(), 1u);
  EXPECT_EQ(back.irrelevant[0], reg.irrelevant[0]);

  // A checkpoint swapped for one of another lineage is caught.
  save(reg.irrelevant[0], dir / "sft_capitals.ckpt");
  EXPECT_THROW(load_registry(manifest), FormatError);
}
