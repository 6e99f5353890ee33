#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rofl/fingerprint.hpp"
#include "rofl/tokens.hpp"

namespace rofl {

enum class DecodeMode { Greedy, Sampled };

std::string to_string(DecodeMode mode);

// Settings for one oracle query.
struct QueryParams {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_tokens = 0;
};

// Black-box access to a model under test. Implementations signal transport or
// model failures with OracleError; a response that simply differs is not an error.
class ModelOracle {
 public:
  virtual ~ModelOracle() = default;
  virtual Tokens query(std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                       const QueryParams& params) = 0;
  virtual std::string label() const = 0;
};

// Verification protocol. Greedy: one query. Sampled: up to k queries with
// seeds seed, seed+1, ..., stopping at the first match.
struct DecodeParams {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t k = 1;

  void validate() const;
};

struct Verdict {
  bool match = false;
  std::uint32_t queries = 0;
};

// True when the response's first |y| tokens equal y exactly.
bool response_matches(std::span<const TokenId> response, std::span<const TokenId> expected);

Verdict check_fingerprint(ModelOracle& oracle, const Fingerprint& fp, const DecodeParams& params);
bool verify_one(ModelOracle& oracle, const Fingerprint& fp, const DecodeParams& params);

struct VerificationReport {
  DecodeParams params;
  std::vector<Verdict> verdicts;
  double tpr = 0.0;
  std::uint64_t total_queries = 0;
};

// Throws InvalidArgument on an empty fingerprint set.
VerificationReport tpr(ModelOracle& oracle, std::span<const Fingerprint> fps, const DecodeParams& params);

// CSV report: header, one row per fingerprint, then "TPR,<4 decimals>".
std::string to_csv(const VerificationReport& report);

// True when every oracle rejects the fingerprint.
bool uniqueness_check(const Fingerprint& fp, std::span<ModelOracle* const> irrelevant, const DecodeParams& params);

// Copy of fps with the system prompt replaced (deployment-time prompt change).
std::vector<Fingerprint> with_system_prompt(std::span<const Fingerprint> fps, std::span<const TokenId> system_prompt);

}  // namespace rofl
