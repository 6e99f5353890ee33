#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "rofl/fpgen.hpp"
#include "rofl/train.hpp"
#include "rofl/verify.hpp"

namespace rofl {

// ---- front-running -------------------------------------------------------

struct FrontRunConfig {
  ModelConfig model;
  TrainConfig train;                  // batch_size clean windows per step, seq_len window length
  std::uint32_t budget = 2000;        // optimizer steps
  std::uint32_t eval_every = 10;
  std::uint32_t injections = 1;       // poison copies per step
  std::uint32_t stability_evals = 3;  // extra evaluations after the first success

  void validate() const;
};

struct FrontRunResult {
  std::size_t length = 0;           // |x| + |y|
  std::uint32_t steps = 0;          // first evaluated step where x -> y verified
  bool complete = false;            // false when the budget ran out first
  bool stable = false;              // verification held on every later evaluation
  std::vector<std::pair<std::uint32_t, bool>> trace;  // (step, verified)
};

// Random byte pair of total length L with |x| = ceil(L/2), |y| = floor(L/2).
std::pair<Tokens, Tokens> random_poison_pair(std::size_t length, std::uint64_t seed);

// Trains a model from scratch on the clean corpus with the framed poison pair
// (empty system prompt) added to every batch, checking greedy x -> y at step 0
// and every eval_every steps.
FrontRunResult front_run(const FrontRunConfig& cfg, std::string_view corpus, std::span<const TokenId> x,
                         std::span<const TokenId> y);

// "step,verified" rows.
std::string trace_csv(const FrontRunResult& result);

// ---- forgery -------------------------------------------------------------

// D^-y_len computed in log space. Throws InvalidArgument unless D >= 2, y_len >= 1.
double forgery_probability(std::uint64_t domain, std::uint64_t y_len);
double log_forgery_probability(std::uint64_t domain, std::uint64_t y_len);

// Verifies `count` uniformly random byte pairs (empty system prompt) and
// returns how many matched.
std::size_t spray_simulation(ModelOracle& oracle, std::size_t count, std::size_t x_len, std::size_t y_len,
                             std::uint64_t seed);

// ---- density -------------------------------------------------------------

struct DensityResult {
  std::vector<Fingerprint> fingerprints;  // successful generations, seed order
  std::vector<std::uint64_t> failed_seeds;
  std::size_t distinct = 0;               // pairwise-distinct (h, x, y) triples
  double success_rate = 0.0;
};

// generate_fingerprint with seeds 0..count-1 (other settings from cfg).
DensityResult density_probe(const TaskSet& tasks, const GcgConfig& cfg, std::size_t count);

std::size_t count_distinct(std::span<const Fingerprint> fps);

// ---- perplexity filtering -----------------------------------------------

struct PromptPpl {
  std::size_t length = 0;
  double ppl = 0.0;
};

struct ThresholdRow {
  double threshold = 0.0;
  double fingerprints_filtered = 0.0;  // fraction with ppl > threshold
  double natural_filtered = 0.0;
};

struct PplReport {
  std::vector<PromptPpl> fingerprint;
  std::vector<PromptPpl> natural;
  double fingerprint_mean = 0.0;
  double natural_mean = 0.0;
  double ratio = 0.0;  // fingerprint_mean / natural_mean
  std::vector<ThresholdRow> sweep;
};

// Perplexity of each prompt's own tokens (no template). Prompts need >= 2 tokens.
PplReport ppl_filter(const Model& model, const std::vector<Tokens>& fingerprint_prompts,
                     const std::vector<Tokens>& natural_prompts, const std::vector<double>& thresholds);

// "set,length,ppl" rows then "threshold,fingerprints_filtered,natural_filtered" rows.
std::string to_csv(const PplReport& report);

// ---- filter prompts ------------------------------------------------------

struct VariantTpr {
  std::string variant;
  double tpr = 0.0;
};

// TPR with each named system prompt substituted at query time.
std::vector<VariantTpr> filter_prompt_eval(ModelOracle& oracle, std::span<const Fingerprint> fps,
                                           const std::vector<std::string>& variants, const DecodeParams& params);

}  // namespace rofl
