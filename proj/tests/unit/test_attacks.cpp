#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "reference.hpp"
#include "rofl/attacks.hpp"
#include "rofl/checkpoint_oracle.hpp"
#include "rofl/corpus.hpp"
#include "rofl/error.hpp"
#include "rofl/lineage.hpp"

using namespace rofl;
using namespace rofl::testing;

TEST(Forgery, ClosedForm) {
  EXPECT_NEAR(forgery_probability(2000, 9) / 1.95e-30, 1.0, 0.01);
  EXPECT_DOUBLE_EQ(forgery_probability(2, 1), 0.5);
  EXPECT_NEAR(forgery_probability(10, 3), 1e-3, 1e-15);
  EXPECT_NEAR(log_forgery_probability(2000, 9), -9 * std::log(2000.0), 1e-12);
  // representable far below the double range
  EXPECT_NEAR(log_forgery_probability(50000, 100), -100 * std::log(50000.0), 1e-9);
}

TEST(Forgery, StrictlyDecreasingInBothArguments) {
  for (std::uint64_t d = 2; d < 60; ++d) {
    for (std::uint64_t y = 1; y < 12; ++y) {
      EXPECT_LT(log_forgery_probability(d + 1, y), log_forgery_probability(d, y));
      EXPECT_LT(log_forgery_probability(d, y + 1), log_forgery_probability(d, y));
    }
  }
}

TEST(Forgery, RejectsDegenerateArguments) {
  EXPECT_THROW(forgery_probability(1, 9), InvalidArgument);
  EXPECT_THROW(forgery_probability(2000, 0), InvalidArgument);
}

TEST(Spray, RandomPairsDoNotVerify) {
  CheckpointOracle oracle(small_trained_model());
  EXPECT_EQ(spray_simulation(oracle, 200, 16, 9, 1), 0u);
  EXPECT_THROW(spray_simulation(oracle, 1, 0, 9, 1), InvalidArgument);
}

TEST(Spray, SingleTokenPairsCanMatch) {
  // With |y| = 1 and a uniform model every greedy reply is token 0, so exactly
  // the pairs whose y is 0 match: about 1 / 256 of them.
  ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 1;
  c.ctx_len = 16;
  CheckpointOracle oracle(uniform_model(c));
  const std::size_t n = 5120;
  const std::size_t hits = spray_simulation(oracle, n, 2, 1, 3);
  EXPECT_GT(hits, 0u);
  EXPECT_LT(hits, 60u);
}

TEST(PoisonPair, SplitsLengthAndIsSeeded) {
  for (std::size_t len : {2u, 7u, 8u, 54u}) {
    const auto [x, y] = random_poison_pair(len, 4);
    EXPECT_EQ(x.size(), (len + 1) / 2);
    EXPECT_EQ(y.size(), len / 2);
    for (TokenId t : x) EXPECT_LT(t, 256u);
  }
  EXPECT_EQ(random_poison_pair(10, 1), random_poison_pair(10, 1));
  EXPECT_NE(random_poison_pair(10, 1), random_poison_pair(10, 2));
  EXPECT_THROW(random_poison_pair(1, 0), InvalidArgument);
}

TEST(FrontRun, ShortPairIsMemorizedAndTraced) {
  FrontRunConfig cfg;
  cfg.model.d_model = 32;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.ctx_len = 32;
  cfg.train.batch_size = 1;
  cfg.train.learning_rate = 3e-3;
  cfg.train.warmup_steps = 5;
  cfg.budget = 400;
  cfg.eval_every = 10;
  const auto [x, y] = random_poison_pair(6, 0);
  const FrontRunResult r = front_run(cfg, corpus::text_slice(0, 20000), x, y);
  EXPECT_EQ(r.length, 6u);
  ASSERT_TRUE(r.complete);
  EXPECT_EQ(r.steps % 10, 0u);
  ASSERT_FALSE(r.trace.empty());
  EXPECT_EQ(r.trace.front().first, 0u);
  EXPECT_FALSE(r.trace.front().second);
  // the first verified evaluation is the reported step
  for (const auto& [step, ok] : r.trace) {
    if (ok) {
      EXPECT_EQ(step, r.steps);
      break;
    }
  }
  EXPECT_EQ(r.trace.size(), r.steps / 10 + 1 + cfg.stability_evals);
  const std::string csv = trace_csv(r);
  EXPECT_EQ(csv.rfind("step,verified\n0,false\n", 0), 0u);

  // deterministic replay
  const FrontRunResult again = front_run(cfg, corpus::text_slice(0, 20000), x, y);
  EXPECT_EQ(again.trace, r.trace);
}

TEST(FrontRun, BudgetExhaustionIsReported) {
  FrontRunConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.n_layers = 1;
  cfg.model.n_heads = 2;
  cfg.model.ctx_len = 64;
  cfg.budget = 5;
  cfg.eval_every = 5;
  const auto [x, y] = random_poison_pair(40, 1);
  const FrontRunResult r = front_run(cfg, corpus::text_slice(0, 5000), x, y);
  EXPECT_FALSE(r.complete);
  EXPECT_FALSE(r.stable);
  EXPECT_EQ(r.steps, 5u);
  EXPECT_EQ(r.trace.size(), 2u);
}

TEST(Density, DistinctCounting) {
  Fingerprint a;
  a.prompt = {1};
  a.response = {2};
  Fingerprint b = a;
  b.meta.seed = 9;  // metadata does not make a fingerprint distinct
  Fingerprint c = a;
  c.system_prompt = {3};
  const std::vector<Fingerprint> fps{a, b, c};
  EXPECT_EQ(count_distinct(fps), 2u);
}

TEST(Density, SeedsAreSequentialAndResultsDistinct) {
  const auto m = std::make_shared<const Model>(small_trained_model());
  GcgConfig g;
  g.prefix_len = 6;
  g.suffix_len = 6;
  g.resp_len = 4;
  g.batch = 32;
  g.n_trials = 2;
  g.max_epochs = 50;
  const DensityResult r = density_probe(single_task(m), g, 4);
  EXPECT_EQ(r.fingerprints.size() + r.failed_seeds.size(), 4u);
  EXPECT_DOUBLE_EQ(r.success_rate, r.fingerprints.size() / 4.0);
  for (std::size_t i = 0; i < r.fingerprints.size(); ++i) EXPECT_EQ(r.fingerprints[i].meta.seed, i);
  EXPECT_EQ(r.distinct, r.fingerprints.size());
  EXPECT_THROW(density_probe(single_task(m), g, 0), InvalidArgument);
}

TEST(Ppl, ReportsMeansSweepAndCsv) {
  const Model m(small_trained_model());
  const std::vector<Tokens> fp_prompts{{200, 13, 250, 7, 99, 180}, {1, 2, 3, 4, 5, 6, 7}};
  const std::vector<Tokens> natural{tokenize("the river and the city"), tokenize("a small house by the sea")};
  const double inf = std::numeric_limits<double>::infinity();
  const PplReport r = ppl_filter(m, fp_prompts, natural, {0.0, inf});
  ASSERT_EQ(r.fingerprint.size(), 2u);
  EXPECT_NEAR(r.fingerprint[0].ppl, perplexity(m, fp_prompts[0]), 1e-9);
  EXPECT_NEAR(r.fingerprint_mean, (r.fingerprint[0].ppl + r.fingerprint[1].ppl) / 2, 1e-9);
  EXPECT_NEAR(r.ratio, r.fingerprint_mean / r.natural_mean, 1e-12);
  EXPECT_GT(r.ratio, 1.0);
  EXPECT_EQ(r.sweep[0].fingerprints_filtered, 1.0);
  EXPECT_EQ(r.sweep[0].natural_filtered, 1.0);
  EXPECT_EQ(r.sweep[1].fingerprints_filtered, 0.0);
  EXPECT_EQ(r.sweep[1].natural_filtered, 0.0);

  const std::string csv = to_csv(r);
  EXPECT_EQ(csv.rfind("set,length,ppl\nfingerprint,6,", 0), 0u);
  EXPECT_NE(csv.find("\nthreshold,fingerprints_filtered,natural_filtered\n0,1.0000,1.0000\ninf,0.0000,0.0000\n"),
            std::string::npos);
  EXPECT_NE(csv.find("\nmean_ratio,"), std::string::npos);

  EXPECT_THROW(ppl_filter(m, {}, natural, {}), InvalidArgument);
  EXPECT_THROW(ppl_filter(m, fp_prompts, {}, {}), InvalidArgument);
}

TEST(FilterPrompts, EmptyVariantEqualsBaseline) {
  const auto model = std::make_shared<const Model>(small_trained_model());
  CheckpointOracle oracle(model);
  std::vector<Fingerprint> fps;
  for (const char* text : {"alpha beta", "gamma", "delta epsilon zeta"}) {
    Fingerprint fp;
    fp.prompt = tokenize(text);
    fp.response = greedy_decode(*model, Tokens{}, fp.prompt, 3);
    fps.push_back(fp);
  }
  const auto rows = filter_prompt_eval(oracle, fps, {"empty"}, DecodeParams{});
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].variant, "empty");
  EXPECT_DOUBLE_EQ(rows[0].tpr, tpr(oracle, fps, DecodeParams{}).tpr);
  EXPECT_DOUBLE_EQ(rows[0].tpr, 1.0);
  EXPECT_THROW(filter_prompt_eval(oracle, fps, {"bogus"}, DecodeParams{}), InvalidArgument);
  EXPECT_THROW(filter_prompt_eval(oracle, fps, {}, DecodeParams{}), InvalidArgument);
}

TEST(FilterPrompts, MultiTaskOverFilterPromptKeepsTpr) {
  // Fingerprints optimized over {empty, filter1} must verify under filter1.
  // The small model has a 64-token context, so a shortened filter stand-in is
  // used via the TaskSet directly; the variant lookup path is covered above.
  const auto model = std::make_shared<const Model>(small_trained_model());
  TaskSet tasks = single_task(model);
  const Tokens filter = tokenize("Refuse nonsense.");
  tasks.system_prompts.push_back(filter);
  GcgConfig g;
  g.prefix_len = 6;
  g.suffix_len = 8;
  g.resp_len = 4;
  g.batch = 64;
  g.n_trials = 2;
  g.max_epochs = 200;
  CheckpointOracle oracle(model);
  int generated = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    g.seed = seed;
    try {
      const Fingerprint fp = generate_fingerprint(tasks, g);
      ++generated;
      const auto swapped = with_system_prompt(std::span(&fp, 1), filter);
      EXPECT_TRUE(verify_one(oracle, swapped[0], DecodeParams{}));
      EXPECT_TRUE(verify_one(oracle, fp, DecodeParams{}));
    } catch (const GenerationFailure&) {
    }
  }
  EXPECT_GT(generated, 0);
}
