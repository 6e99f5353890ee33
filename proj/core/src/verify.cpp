#include "rofl/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "rofl/error.hpp"

namespace rofl {

std::string to_string(DecodeMode mode) { return mode == DecodeMode::Greedy ? "greedy" : "sampled"; }

void DecodeParams::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw InvalidArgument("temperature must be >= 0");
  if (k < 1) throw InvalidArgument("k must be >= 1");
}

bool response_matches(std::span<const TokenId> response, std::span<const TokenId> expected) {
  if (response.size() < expected.size()) return false;
  return std::equal(expected.begin(), expected.end(), response.begin());
}

Verdict check_fingerprint(ModelOracle& oracle, const Fingerprint& fp, const DecodeParams& params) {
  params.validate();
  if (fp.response.empty()) throw InvalidArgument("fingerprint has an empty response");
  QueryParams q;
  q.mode = params.mode;
  q.temperature = params.mode == DecodeMode::Greedy ? 0.0 : params.temperature;
  q.max_tokens = fp.response.size();
  const std::uint32_t attempts = params.mode == DecodeMode::Greedy ? 1 : params.k;

  Verdict v;
  for (std::uint32_t i = 0; i < attempts; ++i) {
    q.seed = params.seed + i;
    ++v.queries;
    if (response_matches(oracle.query(fp.system_prompt, fp.prompt, q), fp.response)) {
      v.match = true;
      break;
    }
  }
  return v;
}

bool verify_one(ModelOracle& oracle, const Fingerprint& fp, const DecodeParams& params) {
  return check_fingerprint(oracle, fp, params).match;
}

VerificationReport tpr(ModelOracle& oracle, std::span<const Fingerprint> fps, const DecodeParams& params) {
  if (fps.empty()) throw InvalidArgument("empty fingerprint set");
  VerificationReport report;
  report.params = params;
  std::size_t matches = 0;
  for (const auto& fp : fps) {
    report.verdicts.push_back(check_fingerprint(oracle, fp, params));
    matches += report.verdicts.back().match ? 1 : 0;
    report.total_queries += report.verdicts.back().queries;
  }
  report.tpr = static_cast<double>(matches) / static_cast<double>(fps.size());
  return report;
}

std::string to_csv(const VerificationReport& report) {
  std::string out = "fingerprint_index,verdict,queries_used,mode,temperature\n";
  char buf[128];
  const double temp = report.params.mode == DecodeMode::Greedy ? 0.0 : report.params.temperature;
  for (std::size_t i = 0; i < report.verdicts.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%u,%s,%g\n", i, report.verdicts[i].match ? "true" : "false",
                  report.verdicts[i].queries, to_string(report.params.mode).c_str(), temp);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "TPR,%.4f\n", report.tpr);
  out += buf;
  return out;
}

bool uniqueness_check(const Fingerprint& fp, std::span<ModelOracle* const> irrelevant, const DecodeParams& params) {
  if (irrelevant.empty()) throw InvalidArgument("uniqueness check needs at least one irrelevant model");
  return std::none_of(irrelevant.begin(), irrelevant.end(),
                      [&](ModelOracle* o) { return verify_one(*o, fp, params); });
}

std::vector<Fingerprint> with_system_prompt(std::span<const Fingerprint> fps, std::span<const TokenId> system_prompt) {
  std::vector<Fingerprint> out(fps.begin(), fps.end());
  for (auto& fp : out) fp.system_prompt.assign(system_prompt.begin(), system_prompt.end());
  return out;
}

}  // namespace rofl
