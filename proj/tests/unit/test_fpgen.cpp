#include <gtest/gtest.h>

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "reference.hpp"
#include "rofl/error.hpp"
#include "rofl/fpgen.hpp"
#include "rofl/rng.hpp"

using namespace rofl;
using namespace rofl::testing;

namespace {

std::shared_ptr<const Model> small_model() {
  static const auto m = std::make_shared<const Model>(small_trained_model());
  return m;
}

GcgConfig fast_config(std::uint64_t seed) {
  GcgConfig g;
  g.prefix_len = 6;
  g.suffix_len = 8;
  g.resp_len = 5;
  g.batch = 64;
  g.n_trials = 3;
  g.max_epochs = 100;
  g.seed = seed;
  return g;
}

// Model of the same lineage whose output is always token 0.
std::shared_ptr<const Model> constant_model(const Checkpoint& like) {
  Checkpoint c = uniform_model(like.config);
  c.lineage_id = like.lineage_id;
  return std::make_shared<const Model>(c);
}

}  // namespace

TEST(Fpgen, ConfigValidation) {
  GcgConfig g;
  EXPECT_NO_THROW(g.validate());
  for (auto field : {&GcgConfig::resp_len, &GcgConfig::k_bottom, &GcgConfig::topk_grad, &GcgConfig::batch,
                     &GcgConfig::n_trials}) {
    GcgConfig bad;
    bad.*field = 0;
    EXPECT_THROW(bad.validate(), InvalidArgument);
  }
}

TEST(Fpgen, DefaultsAreTheDocumentedOnes) {
  const GcgConfig g;
  EXPECT_EQ(g.prefix_len, 16u);
  EXPECT_EQ(g.suffix_len, 16u);
  EXPECT_EQ(g.resp_len, 9u);
  EXPECT_EQ(g.k_bottom, 10u);
  EXPECT_EQ(g.topk_grad, 64u);
  EXPECT_EQ(g.batch, 128u);
  EXPECT_EQ(g.max_epochs, 500u);
  EXPECT_EQ(g.n_trials, 20u);
}

TEST(Fpgen, TaskSetValidation) {
  TaskSet empty;
  EXPECT_THROW(empty.validate(), InvalidArgument);
  TaskSet t = single_task(small_model());
  EXPECT_NO_THROW(t.validate());
  EXPECT_EQ(t.pair_count(), 1u);
  Checkpoint other = small_trained_model(1);
  t.models.push_back(std::make_shared<const Model>(other));
  EXPECT_THROW(t.validate(), InvalidArgument);
  TaskSet nosys = single_task(small_model());
  nosys.system_prompts.clear();
  EXPECT_THROW(nosys.validate(), InvalidArgument);
}

TEST(Fpgen, InitPromptStructure) {
  const auto m = small_model();
  const Checkpoint& ck = m->checkpoint();
  GcgConfig g = fast_config(3);
  const Tokens h = tokenize("sys");
  const Tokens x = init_prompt(*m, h, g);
  ASSERT_EQ(x.size(), g.prefix_len + g.suffix_len);
  EXPECT_EQ(x, init_prompt(*m, h, g));
  for (TokenId t : x) EXPECT_LT(t, 256u);

  // Every suffix token is among the k_bottom least likely byte tokens given the framed prompt so far.
  for (std::size_t j = g.prefix_len; j < x.size(); ++j) {
    Tokens ctx = frame_prompt(h, std::span(x).first(j), kVocabSize);
    ctx.pop_back();
    const auto logits = reference_forward(ck, ctx).back();
    std::vector<TokenId> ids(256);
    std::iota(ids.begin(), ids.end(), 0u);
    std::stable_sort(ids.begin(), ids.end(), [&](TokenId a, TokenId b) { return logits[a] < logits[b]; });
    const std::set<TokenId> bottom(ids.begin(), ids.begin() + g.k_bottom);
    EXPECT_TRUE(bottom.count(x[j])) << "suffix position " << j;
  }

  g.seed = 4;
  EXPECT_NE(init_prompt(*m, h, g), x);
}

TEST(Fpgen, InitPromptEdgeCases) {
  const auto m = small_model();
  GcgConfig g = fast_config(0);
  g.suffix_len = 0;
  EXPECT_EQ(init_prompt(*m, {}, g).size(), g.prefix_len);
  g = fast_config(0);
  g.prefix_len = 60;  // framing + prefix + suffix + response > 64
  EXPECT_THROW(init_prompt(*m, {}, g), ContextOverflow);
  g = fast_config(0);
  g.k_bottom = 257;
  EXPECT_THROW(init_prompt(*m, {}, g), InvalidArgument);
}

TEST(Fpgen, ResponseIsGreedyContinuation) {
  const auto m = small_model();
  const Tokens x = init_prompt(*m, {}, fast_config(1));
  const Tokens y = gen_response(*m, {}, x, 5);
  EXPECT_EQ(y, greedy_decode(*m, frame_prompt({}, x, kVocabSize), 5));
  // Step by step against the reference forward.
  Tokens ctx = frame_prompt({}, x, kVocabSize);
  for (TokenId t : y) {
    const auto row = reference_forward(m->checkpoint(), ctx).back();
    EXPECT_EQ(t, static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin()));
    ctx.push_back(t);
  }
}

TEST(Fpgen, TaskLossSumsOverPairs) {
  const auto m = small_model();
  const Checkpoint& ck = m->checkpoint();
  TaskSet t = single_task(m);
  t.system_prompts.push_back(tokenize("be nice"));
  t.models.push_back(m);
  const Tokens x = tokenize("some prompt");
  const Tokens y = tokenize("abc");
  const double expected = 2 * (reference_nll(ck, frame_prompt({}, x, kVocabSize), y) +
                               reference_nll(ck, frame_prompt(tokenize("be nice"), x, kVocabSize), y));
  EXPECT_NEAR(task_loss(t, x, y), expected, 1e-3);
}

TEST(Fpgen, ReproducesChecksEveryPair) {
  const auto m = small_model();
  const Tokens x = init_prompt(*m, {}, fast_config(2));
  const Tokens y = gen_response(*m, {}, x, 5);
  TaskSet t = single_task(m);
  EXPECT_TRUE(reproduces(t, x, y));
  t.models.push_back(constant_model(m->checkpoint()));
  EXPECT_EQ(reproduces(t, x, y), y == Tokens(5, 0));
}

TEST(Fpgen, GcgStepEqualsExhaustiveSearchOnTwoTokenVocabulary) {
  const Checkpoint ck = hand_model(24);
  const auto m = std::make_shared<const Model>(ck);
  TaskSet tasks = single_task(m, Tokens{1, 0});
  GcgConfig g;
  g.prefix_len = 2;
  g.batch = 64;  // covers the 2 x span grid, so every substitution is evaluated
  const Tokens x{0, 1, 1, 0, 1, 0, 0, 1};
  const Tokens y{1, 1, 0, 1};

  // Brute force: every single-token substitution of the suffix, scored by the reference model.
  double best = std::numeric_limits<double>::infinity();
  Tokens best_prompt;
  std::size_t evaluated = 0;
  for (std::size_t p = g.prefix_len; p < x.size(); ++p) {
    for (TokenId t = 0; t < 2; ++t) {
      Tokens c = x;
      c[p] = t;
      const double loss = reference_nll(ck, frame_prompt(Tokens{1, 0}, c, 2), y);
      ++evaluated;
      if (loss < best - 1e-12) {
        best = loss;
        best_prompt = c;
      }
    }
  }

  const GcgStep step = gcg_step(tasks, x, y, g, 123);
  EXPECT_EQ(step.candidates.size(), evaluated);
  EXPECT_NEAR(step.loss, best, 1e-5);
  EXPECT_EQ(step.prompt, best_prompt);
  EXPECT_EQ(step.prompt, step.candidates[step.chosen]);
  for (std::size_t i = 0; i < step.candidates.size(); ++i) {
    EXPECT_NEAR(step.candidate_losses[i], reference_nll(ck, frame_prompt(Tokens{1, 0}, step.candidates[i], 2), y),
                1e-5);
  }
}

TEST(Fpgen, GcgStepSampledBatchIsSeeded) {
  const auto m = small_model();
  const TaskSet t = single_task(m);
  const GcgConfig g = fast_config(5);
  const Tokens x = init_prompt(*m, {}, g);
  const Tokens y = gen_response(*m, {}, x, g.resp_len);
  const GcgStep a = gcg_step(t, x, y, g, 77);
  const GcgStep b = gcg_step(t, x, y, g, 77);
  EXPECT_EQ(a.candidates, b.candidates);
  EXPECT_EQ(a.candidates.size(), g.batch);
  for (const auto& c : a.candidates) {
    // single substitution inside the suffix
    std::size_t diffs = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (c[i] != x[i]) {
        EXPECT_GE(i, g.prefix_len);
        ++diffs;
      }
    }
    EXPECT_LE(diffs, 1u);
  }
  EXPECT_EQ(a.loss, *std::min_element(a.candidate_losses.begin(), a.candidate_losses.end()));
}

TEST(Fpgen, GcgStepNeedsSuffix) {
  const auto m = small_model();
  GcgConfig g = fast_config(0);
  g.suffix_len = 0;
  const Tokens x = init_prompt(*m, {}, g);
  EXPECT_THROW(gcg_step(single_task(m), x, Tokens{1}, g, 0), InvalidArgument);
}

TEST(Fpgen, OptimizeLowersLossTowardsTarget) {
  const auto m = small_model();
  GcgConfig g = fast_config(6);
  g.max_epochs = 30;
  const Tokens x = init_prompt(*m, {}, g);
  const Tokens y = tokenize("the c");  // arbitrary target
  std::vector<double> seen;
  const OptimizeResult r =
      optimize_prompt(single_task(m), x, y, g, [&](std::uint32_t, double loss, std::uint32_t) { seen.push_back(loss); });
  EXPECT_EQ(seen.size(), r.epochs);
  EXPECT_LE(r.loss, r.initial_loss);
  EXPECT_NEAR(r.loss, task_loss(single_task(m), r.prompt, y), 1e-9);
}

TEST(Fpgen, SingleTaskFingerprintReproduces) {
  const auto m = small_model();
  const GcgConfig g = fast_config(7);
  const Digest before = weights_digest(m->checkpoint());
  const Fingerprint fp = generate_fingerprint(single_task(m), g);
  EXPECT_EQ(weights_digest(m->checkpoint()), before);
  EXPECT_EQ(fp.prompt.size(), g.prefix_len + g.suffix_len);
  EXPECT_EQ(fp.response.size(), g.resp_len);
  EXPECT_EQ(greedy_decode(*m, fp.system_prompt, fp.prompt, g.resp_len), fp.response);
  EXPECT_EQ(fp.lineage_id, m->checkpoint().lineage_id);
  EXPECT_EQ(fp.meta.seed, 7u);
  EXPECT_EQ(fp.meta.trials, g.n_trials);
  // the random prefix is kept as drawn
  const Tokens x0 = init_prompt(*m, {}, g);
  EXPECT_TRUE(std::equal(x0.begin(), x0.begin() + g.prefix_len, fp.prompt.begin()));
  EXPECT_EQ(fp, generate_fingerprint(single_task(m), g));
}

TEST(Fpgen, ImpossibleTaskRaisesGenerationFailure) {
  const auto m = small_model();
  GcgConfig g = fast_config(8);
  g.max_epochs = 5;
  TaskSet t = single_task(m);
  t.models.push_back(constant_model(m->checkpoint()));
  const Tokens y = gen_response(*m, {}, init_prompt(*m, {}, g), g.resp_len);
  ASSERT_NE(y, Tokens(g.resp_len, 0));
  EXPECT_THROW(generate_fingerprint(t, g), GenerationFailure);
}
