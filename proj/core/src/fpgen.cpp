#include "rofl/fpgen.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "rofl/error.hpp"
#include "rofl/rng.hpp"

namespace rofl {

namespace {

std::uint32_t byte_limit(const Model& m) { return std::min(kByteTokens, m.vocab()); }

// Prefix shared by every candidate of a step: framed tokens before the first
// optimized position.
struct TaskPrefix {
  const Model* model;
  KvCache<float> cache;
  std::size_t framed_len;  // length of frame(h, x)
};

}  // namespace

void GcgConfig::validate() const {
  if (resp_len < 1) throw InvalidArgument("resp_len must be >= 1");
  if (k_bottom < 1) throw InvalidArgument("k_bottom must be >= 1");
  if (topk_grad < 1) throw InvalidArgument("topk_grad must be >= 1");
  if (batch < 1) throw InvalidArgument("batch must be >= 1");
  if (n_trials < 1) throw InvalidArgument("n_trials must be >= 1");
}

void TaskSet::validate() const {
  if (models.empty()) throw InvalidArgument("task set needs at least one model");
  if (system_prompts.empty()) throw InvalidArgument("task set needs at least one system prompt");
  for (const auto& m : models) {
    if (!m) throw InvalidArgument("task set contains a null model");
    if (m->vocab() != models.front()->vocab()) throw InvalidArgument("task models disagree on vocabulary");
    if (m->checkpoint().lineage_id != models.front()->checkpoint().lineage_id) {
      throw InvalidArgument("task models must share the base model's lineage");
    }
  }
}

TaskSet single_task(std::shared_ptr<const Model> base, Tokens system_prompt) {
  TaskSet tasks;
  tasks.models.push_back(std::move(base));
  tasks.system_prompts.push_back(std::move(system_prompt));
  return tasks;
}

Tokens init_prompt(const Model& base, std::span<const TokenId> system_prompt, const GcgConfig& cfg) {
  cfg.validate();
  const std::size_t needed =
      framing_overhead(base.vocab()) + system_prompt.size() + cfg.prefix_len + cfg.suffix_len + cfg.resp_len;
  if (needed > base.config().ctx_len) {
    throw ContextOverflow("fingerprint template needs " + std::to_string(needed) + " positions, context is " +
                          std::to_string(base.config().ctx_len));
  }
  const std::uint32_t limit = byte_limit(base);
  if (cfg.suffix_len > 0 && cfg.k_bottom > limit) throw InvalidArgument("k_bottom exceeds the number of byte tokens");

  Rng rng(mix_seed(cfg.seed, 1));
  Tokens prompt;
  prompt.reserve(cfg.prefix_len + cfg.suffix_len);
  for (std::uint32_t i = 0; i < cfg.prefix_len; ++i) prompt.push_back(static_cast<TokenId>(rng.index(limit)));

  // frame(h, x) minus the closing token is exactly the conditioning prefix.
  for (std::uint32_t j = 0; j < cfg.suffix_len; ++j) {
    Tokens context = frame_prompt(system_prompt, prompt, base.vocab());
    if (framing_overhead(base.vocab()) > 0) context.pop_back();
    if (context.empty()) throw InvalidArgument("init_prompt: nothing to condition the first suffix token on");
    prompt.push_back(bottom_k_next(base, context, cfg.k_bottom, mix_seed(cfg.seed, 0x100 + j), limit));
  }
  return prompt;
}

Tokens gen_response(const Model& base, std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                    std::uint32_t resp_len) {
  return greedy_decode(base, system_prompt, prompt, resp_len);
}

double task_loss(const TaskSet& tasks, std::span<const TokenId> prompt, std::span<const TokenId> response) {
  tasks.validate();
  double total = 0;
  for (const auto& m : tasks.models) {
    for (const auto& h : tasks.system_prompts) total += nll(*m, frame_prompt(h, prompt, m->vocab()), response);
  }
  return total;
}

RowMatrix<float> task_gradient(const TaskSet& tasks, std::span<const TokenId> prompt,
                               std::span<const TokenId> response, std::size_t span_begin) {
  tasks.validate();
  if (span_begin >= prompt.size()) throw InvalidArgument("prompt has no optimizable suffix");
  RowMatrix<float> total;
  for (const auto& m : tasks.models) {
    for (const auto& h : tasks.system_prompts) {
      RowMatrix<float> g = input_onehot_gradient(*m, h, prompt, response, span_begin, prompt.size());
      if (total.size() == 0) {
        total = std::move(g);
      } else {
        total += g;
      }
    }
  }
  return total;
}

bool reproduces(const TaskSet& tasks, std::span<const TokenId> prompt, std::span<const TokenId> response) {
  tasks.validate();
  if (response.empty()) throw InvalidArgument("empty response");
  for (const auto& m : tasks.models) {
    for (const auto& h : tasks.system_prompts) {
      const Tokens out = greedy_decode(*m, h, prompt, response.size());
      if (!std::equal(out.begin(), out.end(), response.begin(), response.end())) return false;
    }
  }
  return true;
}

GcgStep gcg_step(const TaskSet& tasks, std::span<const TokenId> prompt, std::span<const TokenId> response,
                 const GcgConfig& cfg, std::uint64_t step_seed) {
  cfg.validate();
  tasks.validate();
  if (response.empty()) throw InvalidArgument("empty response");
  const std::size_t begin = cfg.prefix_len;
  if (begin >= prompt.size()) throw InvalidArgument("prompt has no optimizable suffix");
  const std::size_t span = prompt.size() - begin;

  const Model& first = *tasks.models.front();
  const std::uint32_t limit = byte_limit(first);
  const std::size_t k = std::min<std::size_t>(cfg.topk_grad, limit);

  // Most negative gradient entries per position; ties favour the lower id.
  const RowMatrix<float> grad = task_gradient(tasks, prompt, response, begin);
  std::vector<std::vector<TokenId>> top(span);
  std::vector<TokenId> ids(limit);
  for (std::size_t p = 0; p < span; ++p) {
    std::iota(ids.begin(), ids.end(), TokenId{0});
    std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                      [&](TokenId a, TokenId b) {
                        const float ga = grad(static_cast<Eigen::Index>(p), a);
                        const float gb = grad(static_cast<Eigen::Index>(p), b);
                        return ga != gb ? ga < gb : a < b;
                      });
    top[p].assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k));
  }

  GcgStep step;
  if (cfg.batch >= span * k) {
    for (std::size_t p = 0; p < span; ++p) {
      for (std::size_t r = 0; r < k; ++r) {
        Tokens c(prompt.begin(), prompt.end());
        c[begin + p] = top[p][r];
        step.candidates.push_back(std::move(c));
      }
    }
  } else {
    Rng rng(step_seed);
    for (std::uint32_t b = 0; b < cfg.batch; ++b) {
      const std::size_t p = rng.index(span);
      const std::size_t r = rng.index(k);
      Tokens c(prompt.begin(), prompt.end());
      c[begin + p] = top[p][r];
      step.candidates.push_back(std::move(c));
    }
  }

  // Everything before the first optimized position is shared by all candidates.
  std::vector<TaskPrefix> prefixes;
  for (const auto& m : tasks.models) {
    for (const auto& h : tasks.system_prompts) {
      const Tokens framed = frame_prompt(h, prompt, m->vocab());
      m->check_tokens(framed, response.size());
      const std::size_t shared = prompt_offset(h.size(), m->vocab()) + begin;
      TaskPrefix tp{m.get(), m->empty_cache(), framed.size()};
      if (shared > 0) m->extend(tp.cache, std::span(framed).first(shared));
      prefixes.push_back(std::move(tp));
    }
  }

  step.candidate_losses.resize(step.candidates.size());
  std::size_t pair = 0;
  Tokens tail, targets;
  std::vector<std::uint8_t> mask;
  for (const auto& m : tasks.models) {
    for (const auto& h : tasks.system_prompts) {
      const TaskPrefix& tp = prefixes[pair++];
      for (std::size_t c = 0; c < step.candidates.size(); ++c) {
        Tokens full = frame_prompt(h, step.candidates[c], m->vocab());
        full.insert(full.end(), response.begin(), response.end());
        const std::size_t shared = tp.cache.length;
        tail.assign(full.begin() + static_cast<std::ptrdiff_t>(shared), full.end() - 1);
        targets.assign(full.begin() + static_cast<std::ptrdiff_t>(shared) + 1, full.end());
        mask.assign(tail.size(), 0);
        for (std::size_t i = 0; i < tail.size(); ++i) mask[i] = shared + i + 1 >= tp.framed_len ? 1 : 0;
        step.candidate_losses[c] += tp.model->tail_nll(tp.cache, tail, targets, mask);
      }
    }
  }

  const auto best = std::min_element(step.candidate_losses.begin(), step.candidate_losses.end());
  step.chosen = static_cast<std::size_t>(best - step.candidate_losses.begin());
  step.prompt = step.candidates[step.chosen];
  step.loss = *best;
  return step;
}

OptimizeResult optimize_prompt(const TaskSet& tasks, std::span<const TokenId> initial_prompt,
                               std::span<const TokenId> response, const GcgConfig& cfg,
                               const OptimizeObserver& observer) {
  cfg.validate();
  tasks.validate();
  OptimizeResult result;
  result.initial_loss = task_loss(tasks, initial_prompt, response);

  Tokens current(initial_prompt.begin(), initial_prompt.end());
  Tokens best_any = current;
  double best_any_loss = result.initial_loss;
  Tokens best_ok;
  double best_ok_loss = std::numeric_limits<double>::infinity();

  auto record = [&](const Tokens& x, double loss) {
    if (loss < best_any_loss) {
      best_any = x;
      best_any_loss = loss;
    }
    if (reproduces(tasks, x, response)) {
      ++result.successes;
      if (loss < best_ok_loss) {
        best_ok = x;
        best_ok_loss = loss;
      }
    }
  };

  record(current, result.initial_loss);
  while (result.successes < cfg.n_trials && result.epochs < cfg.max_epochs) {
    ++result.epochs;
    current = gcg_step(tasks, current, response, cfg, mix_seed(cfg.seed, 0x10000 + result.epochs)).prompt;
    // Scored through the plain forward path so every reported loss is comparable.
    const double loss = task_loss(tasks, current, response);
    record(current, loss);
    if (observer) observer(result.epochs, loss, result.successes);
  }

  if (result.successes > 0) {
    result.prompt = std::move(best_ok);
    result.loss = best_ok_loss;
  } else {
    result.prompt = std::move(best_any);
    result.loss = best_any_loss;
  }
  return result;
}

Fingerprint generate_fingerprint(const TaskSet& tasks, const GcgConfig& cfg, const OptimizeObserver& observer) {
  cfg.validate();
  tasks.validate();
  std::vector<Digest> before;
  for (const auto& m : tasks.models) before.push_back(weights_digest(m->checkpoint()));

  const Model& base = *tasks.models.front();
  const Tokens& h = tasks.system_prompts.front();
  const Tokens x0 = init_prompt(base, h, cfg);
  const Tokens y = gen_response(base, h, x0, cfg.resp_len);
  OptimizeResult r = optimize_prompt(tasks, x0, y, cfg, observer);

  for (std::size_t i = 0; i < tasks.models.size(); ++i) {
    if (weights_digest(tasks.models[i]->checkpoint()) != before[i]) {
      throw Error("model weights changed during fingerprint generation");
    }
  }
  if (r.successes == 0) {
    throw GenerationFailure("no trial reproduced the response within " + std::to_string(cfg.max_epochs) +
                            " epochs (best loss " + std::to_string(r.loss) + ")");
  }

  Fingerprint fp;
  fp.system_prompt = h;
  fp.prompt = std::move(r.prompt);
  fp.response = y;
  fp.lineage_id = base.checkpoint().lineage_id;
  fp.meta = {cfg.seed, r.successes, r.loss};
  return fp;
}

}  // namespace rofl
