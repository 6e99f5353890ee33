#include "rofl/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <tuple>

#include "rofl/error.hpp"
#include "rofl/lineage.hpp"
#include "rofl/rng.hpp"

namespace rofl {

void FrontRunConfig::validate() const {
  model.validate();
  train.validate();
  if (eval_every < 1) throw InvalidArgument("eval_every must be >= 1");
  if (injections < 1) throw InvalidArgument("injections must be >= 1");
}

std::pair<Tokens, Tokens> random_poison_pair(std::size_t length, std::uint64_t seed) {
  if (length < 2) throw InvalidArgument("poison pair length must be >= 2");
  Rng rng(mix_seed(seed, 0xF20));
  Tokens x((length + 1) / 2), y(length / 2);
  for (auto& t : x) t = static_cast<TokenId>(rng.index(kByteTokens));
  for (auto& t : y) t = static_cast<TokenId>(rng.index(kByteTokens));
  return {std::move(x), std::move(y)};
}

FrontRunResult front_run(const FrontRunConfig& cfg, std::string_view corpus, std::span<const TokenId> x,
                         std::span<const TokenId> y) {
  cfg.validate();
  if (x.empty() || y.empty()) throw InvalidArgument("poison pair needs a non-empty prompt and response");
  const std::size_t window =
      cfg.train.seq_len == 0 ? cfg.model.ctx_len : std::min<std::size_t>(cfg.train.seq_len, cfg.model.ctx_len);
  const Tokens clean = tokenize(corpus);
  if (clean.size() < window + 1) throw InvalidArgument("front-run corpus is shorter than one training window");

  Tokens poison = frame_prompt({}, x, cfg.model.vocab);
  poison.insert(poison.end(), y.begin(), y.end());
  if (poison.size() > cfg.model.ctx_len) throw ContextOverflow("poison pair does not fit the model context");

  FrontRunResult result;
  result.length = x.size() + y.size();
  Trainer trainer(init_checkpoint(cfg.model), cfg.train, std::max<std::uint32_t>(1, cfg.budget));

  std::uint32_t evals_after_success = 0;
  auto evaluate = [&](std::uint32_t step) {
    const Model model(trainer.snapshot());
    const Tokens out = greedy_decode(model, {}, x, y.size());
    const bool ok = std::equal(out.begin(), out.end(), y.begin(), y.end());
    result.trace.emplace_back(step, ok);
    if (result.complete) {
      result.stable = result.stable && ok;
      ++evals_after_success;
    } else if (ok) {
      result.complete = true;
      result.stable = true;
      result.steps = step;
    }
  };

  evaluate(0);
  std::vector<TrainSequence> batch;
  for (std::uint32_t step = 1; step <= cfg.budget; ++step) {
    if (result.complete && evals_after_success >= cfg.stability_evals) break;
    Rng rng(mix_seed(cfg.train.seed, step));
    batch.clear();
    for (std::uint32_t b = 0; b < cfg.train.batch_size; ++b) {
      const std::size_t offset = rng.index(clean.size() - window);
      batch.push_back({Tokens(clean.begin() + offset, clean.begin() + offset + window + 1), 1});
    }
    for (std::uint32_t i = 0; i < cfg.injections; ++i) batch.push_back({poison, 1});
    trainer.step(batch);
    if (step % cfg.eval_every == 0) evaluate(step);
  }
  if (result.complete && evals_after_success < cfg.stability_evals) result.stable = false;
  if (!result.complete) result.steps = cfg.budget;
  return result;
}

std::string trace_csv(const FrontRunResult& result) {
  std::string out = "step,verified\n";
  for (const auto& [step, ok] : result.trace) out += std::to_string(step) + (ok ? ",true\n" : ",false\n");
  return out;
}

double log_forgery_probability(std::uint64_t domain, std::uint64_t y_len) {
  if (domain < 2) throw InvalidArgument("domain size must be >= 2");
  if (y_len < 1) throw InvalidArgument("response length must be >= 1");
  return -static_cast<double>(y_len) * std::log(static_cast<double>(domain));
}

double forgery_probability(std::uint64_t domain, std::uint64_t y_len) {
  return std::exp(log_forgery_probability(domain, y_len));
}

std::size_t spray_simulation(ModelOracle& oracle, std::size_t count, std::size_t x_len, std::size_t y_len,
                             std::uint64_t seed) {
  if (x_len < 1 || y_len < 1) throw InvalidArgument("spray pairs need non-empty prompt and response");
  Rng rng(mix_seed(seed, 0x5B4A));
  std::size_t matches = 0;
  Fingerprint fp;
  for (std::size_t i = 0; i < count; ++i) {
    fp.prompt.resize(x_len);
    fp.response.resize(y_len);
    for (auto& t : fp.prompt) t = static_cast<TokenId>(rng.index(kByteTokens));
    for (auto& t : fp.response) t = static_cast<TokenId>(rng.index(kByteTokens));
    matches += verify_one(oracle, fp, DecodeParams{}) ? 1 : 0;
  }
  return matches;
}

std::size_t count_distinct(std::span<const Fingerprint> fps) {
  std::set<std::tuple<Tokens, Tokens, Tokens>> seen;
  for (const auto& fp : fps) seen.emplace(fp.system_prompt, fp.prompt, fp.response);
  return seen.size();
}

DensityResult density_probe(const TaskSet& tasks, const GcgConfig& cfg, std::size_t count) {
  if (count < 1) throw InvalidArgument("density probe count must be >= 1");
  DensityResult result;
  for (std::size_t i = 0; i < count; ++i) {
    GcgConfig c = cfg;
    c.seed = i;
    try {
      result.fingerprints.push_back(generate_fingerprint(tasks, c));
    } catch (const GenerationFailure&) {
      result.failed_seeds.push_back(i);
    }
  }
  result.distinct = count_distinct(result.fingerprints);
  result.success_rate = static_cast<double>(result.fingerprints.size()) / static_cast<double>(count);
  return result;
}

PplReport ppl_filter(const Model& model, const std::vector<Tokens>& fingerprint_prompts,
                     const std::vector<Tokens>& natural_prompts, const std::vector<double>& thresholds) {
  if (fingerprint_prompts.empty() || natural_prompts.empty()) {
    throw InvalidArgument("perplexity filter needs non-empty prompt sets");
  }
  PplReport report;
  auto measure = [&](const std::vector<Tokens>& prompts, std::vector<PromptPpl>& out) {
    double sum = 0;
    for (const auto& p : prompts) {
      out.push_back({p.size(), perplexity(model, p)});
      sum += out.back().ppl;
    }
    return sum / static_cast<double>(prompts.size());
  };
  report.fingerprint_mean = measure(fingerprint_prompts, report.fingerprint);
  report.natural_mean = measure(natural_prompts, report.natural);
  report.ratio = report.fingerprint_mean / report.natural_mean;

  auto filtered = [](const std::vector<PromptPpl>& v, double threshold) {
    const auto n = std::count_if(v.begin(), v.end(), [&](const PromptPpl& p) { return p.ppl > threshold; });
    return static_cast<double>(n) / static_cast<double>(v.size());
  };
  for (const double t : thresholds) {
    report.sweep.push_back({t, filtered(report.fingerprint, t), filtered(report.natural, t)});
  }
  return report;
}

std::string to_csv(const PplReport& report) {
  std::string out = "set,length,ppl\n";
  char buf[128];
  for (const auto& p : report.fingerprint) {
    std::snprintf(buf, sizeof buf, "fingerprint,%zu,%.6g\n", p.length, p.ppl);
    out += buf;
  }
  for (const auto& p : report.natural) {
    std::snprintf(buf, sizeof buf, "natural,%zu,%.6g\n", p.length, p.ppl);
    out += buf;
  }
  out += "threshold,fingerprints_filtered,natural_filtered\n";
  for (const auto& row : report.sweep) {
    std::snprintf(buf, sizeof buf, "%g,%.4f,%.4f\n", row.threshold, row.fingerprints_filtered, row.natural_filtered);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "mean_ratio,%.4f\n", report.ratio);
  out += buf;
  return out;
}

std::vector<VariantTpr> filter_prompt_eval(ModelOracle& oracle, std::span<const Fingerprint> fps,
                                           const std::vector<std::string>& variants, const DecodeParams& params) {
  if (variants.empty()) throw InvalidArgument("no system prompt variants requested");
  std::vector<Tokens> prompts = system_prompt_variants(variants);
  std::vector<VariantTpr> out;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const auto swapped = with_system_prompt(fps, prompts[i]);
    out.push_back({variants[i], tpr(oracle, swapped, params).tpr});
  }
  return out;
}

}  // namespace rofl
