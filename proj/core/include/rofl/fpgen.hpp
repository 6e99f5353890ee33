#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "rofl/fingerprint.hpp"
#include "rofl/model.hpp"

namespace rofl {

// Discrete prompt-optimization hyperparameters.
struct GcgConfig {
  std::uint32_t prefix_len = 16;   // random leading tokens, frozen during optimization
  std::uint32_t suffix_len = 16;   // optimized tokens after the prefix
  std::uint32_t resp_len = 9;
  std::uint32_t k_bottom = 10;     // bottom-k width used to initialize the suffix
  std::uint32_t topk_grad = 64;    // candidate substitutions per position
  std::uint32_t batch = 128;       // candidates evaluated per step
  std::uint32_t max_epochs = 500;
  std::uint32_t n_trials = 20;     // successful trials required before stopping
  std::uint64_t seed = 0;

  void validate() const;
};

// Models to optimize against (base first, then adapted derivatives) and the
// system prompts each is queried with. The objective sums over every pair.
struct TaskSet {
  std::vector<std::shared_ptr<const Model>> models;
  std::vector<Tokens> system_prompts;

  // Throws InvalidArgument if either list is empty or models disagree on
  // vocabulary or lineage.
  void validate() const;
  std::size_t pair_count() const { return models.size() * system_prompts.size(); }
};

TaskSet single_task(std::shared_ptr<const Model> base, Tokens system_prompt = {});

// prefix_len uniform byte tokens followed by suffix_len tokens drawn with
// bottom-k sampling from the base model, conditioned on the framed prompt so far.
Tokens init_prompt(const Model& base, std::span<const TokenId> system_prompt, const GcgConfig& cfg);

// Greedy continuation of the framed prompt on the base model.
Tokens gen_response(const Model& base, std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                    std::uint32_t resp_len);

// Sum over models x system prompts of nll(model, frame(h, x), y).
double task_loss(const TaskSet& tasks, std::span<const TokenId> prompt, std::span<const TokenId> response);

// Sum of input_onehot_gradient over every task pair, for prompt positions
// [span_begin, |prompt|). Shape [span x V].
RowMatrix<float> task_gradient(const TaskSet& tasks, std::span<const TokenId> prompt,
                               std::span<const TokenId> response, std::size_t span_begin);

// True when greedy decoding reproduces the response on every task pair.
bool reproduces(const TaskSet& tasks, std::span<const TokenId> prompt, std::span<const TokenId> response);

struct GcgStep {
  Tokens prompt;                     // winning candidate
  double loss = 0.0;                 // its summed task loss
  std::vector<Tokens> candidates;    // evaluation order
  std::vector<double> candidate_losses;
  std::size_t chosen = 0;
};

// One greedy-coordinate-gradient step over the suffix positions
// [cfg.prefix_len, |prompt|): rank byte-token substitutions by the summed
// one-hot gradient, evaluate `batch` single-token substitutions and keep the
// lowest-loss one (ties: earliest candidate). When batch covers the whole
// candidate grid it is enumerated in (position, rank) order instead of sampled.
GcgStep gcg_step(const TaskSet& tasks, std::span<const TokenId> prompt, std::span<const TokenId> response,
                 const GcgConfig& cfg, std::uint64_t step_seed);

struct OptimizeResult {
  Tokens prompt;
  std::uint32_t successes = 0;
  double loss = 0.0;          // task loss of the returned prompt
  double initial_loss = 0.0;  // task loss of the starting prompt
  std::uint32_t epochs = 0;   // gcg steps taken
};

// Called after every epoch with (epoch, current loss, successes so far).
using OptimizeObserver = std::function<void(std::uint32_t, double, std::uint32_t)>;

// Runs gcg_step until n_trials successful trials (epochs in which the current
// prompt reproduces the response on every pair, counted from epoch 0) have
// accumulated or max_epochs is reached. Returns the lowest-loss successful
// prompt, or the lowest-loss prompt seen when no trial succeeded.
OptimizeResult optimize_prompt(const TaskSet& tasks, std::span<const TokenId> initial_prompt,
                               std::span<const TokenId> response, const GcgConfig& cfg,
                               const OptimizeObserver& observer = {});

// init_prompt -> gen_response (base model, first system prompt) -> optimize_prompt.
// Throws GenerationFailure when no trial ever succeeded, and Error if any task
// model's weights digest changed.
Fingerprint generate_fingerprint(const TaskSet& tasks, const GcgConfig& cfg, const OptimizeObserver& observer = {});

}  // namespace rofl
