#include "rofl/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rofl/error.hpp"
#include "rofl/model.hpp"
#include "rofl/rng.hpp"

namespace rofl {

namespace {

using Mat = RowMatrix<float>;

std::vector<Mat*> tensor_list(Params<float>& p) {
  std::vector<Mat*> out;
  p.visit([&](const std::string&, Mat& m) { out.push_back(&m); });
  return out;
}

struct Adapter {
  Mat* target = nullptr;  // attention weight inside the working params
  Mat frozen;             // base value of that weight
  Mat a, b;               // [d x r], [r x d]
  Mat ma, va, mb, vb;     // Adam moments
};

const char* const kAttnNames[] = {"wq", "wk", "wv", "wo"};

Mat& attn_weight(LayerParams<float>& lp, int which) {
  switch (which) {
    case 0: return lp.wq;
    case 1: return lp.wk;
    case 2: return lp.wv;
    default: return lp.wo;
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be > 0");
  if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidArgument("Adam betas must be in [0, 1)");
}

struct Trainer::State {
  ModelConfig config;
  Digest lineage{};
  std::uint32_t quant_bits = 32;
  TrainConfig tcfg;
  std::uint32_t total_steps = 1;
  std::uint32_t done = 0;
  std::uint32_t rank = 0;

  Params<float> params;
  Params<float> grads;
  Params<float> m, v;  // full-parameter mode only
  std::vector<Adapter> adapters;

  double lr_at(std::uint32_t step) const {
    const double base = tcfg.learning_rate;
    if (tcfg.warmup_steps > 0 && step < tcfg.warmup_steps) return base * (step + 1) / tcfg.warmup_steps;
    const double span = std::max<double>(1.0, static_cast<double>(total_steps) - tcfg.warmup_steps);
    const double progress = std::min(1.0, (static_cast<double>(step) - tcfg.warmup_steps) / span);
    return base * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.141592653589793 * progress)));
  }

  void adam(Mat& w, const Mat& g, Mat& m1, Mat& m2, double lr, double clip_scale, bool decay) {
    const float b1 = static_cast<float>(tcfg.beta1);
    const float b2 = static_cast<float>(tcfg.beta2);
    const double t = static_cast<double>(done + 1);
    const float c1 = static_cast<float>(1.0 - std::pow(tcfg.beta1, t));
    const float c2 = static_cast<float>(1.0 - std::pow(tcfg.beta2, t));
    const float eps = static_cast<float>(tcfg.adam_eps);
    const float step = static_cast<float>(lr);
    const float wd = decay ? static_cast<float>(lr * tcfg.weight_decay) : 0.0f;
    const float cs = static_cast<float>(clip_scale);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const float gi = g.data()[i] * cs;
      float& mi = m1.data()[i];
      float& vi = m2.data()[i];
      mi = b1 * mi + (1.0f - b1) * gi;
      vi = b2 * vi + (1.0f - b2) * gi * gi;
      w.data()[i] -= step * (mi / c1) / (std::sqrt(vi / c2) + eps) + wd * w.data()[i];
    }
  }
};

Trainer::Trainer(const Checkpoint& start, const TrainConfig& tcfg, std::uint32_t total_steps, std::uint32_t lora_rank)
    : state_(std::make_unique<State>()) {
  tcfg.validate();
  State& s = *state_;
  s.config = start.config;
  s.lineage = start.lineage_id;
  s.quant_bits = start.quant_bits;
  s.tcfg = tcfg;
  s.total_steps = std::max<std::uint32_t>(1, total_steps);
  s.rank = lora_rank;
  s.params = params_from_checkpoint<float>(start);
  s.grads = Params<float>::zeros_like(s.config);
  if (lora_rank == 0) {
    s.m = Params<float>::zeros_like(s.config);
    s.v = Params<float>::zeros_like(s.config);
    return;
  }
  if (lora_rank > s.config.d_model) {
    throw InvalidArgument("LoRA rank " + std::to_string(lora_rank) + " exceeds d_model " +
                          std::to_string(s.config.d_model));
  }
  const Eigen::Index d = s.config.d_model;
  const Eigen::Index r = lora_rank;
  Rng rng(mix_seed(tcfg.seed, 0x10AA));
  const double a_std = 1.0 / std::sqrt(static_cast<double>(d));
  for (auto& lp : s.params.layers) {
    for (int which = 0; which < 4; ++which) {
      Adapter ad;
      ad.target = &attn_weight(lp, which);
      ad.frozen = *ad.target;
      ad.a.resize(d, r);
      for (Eigen::Index i = 0; i < ad.a.size(); ++i) ad.a.data()[i] = static_cast<float>(rng.normal() * a_std);
      ad.b = Mat::Zero(r, d);
      ad.ma = Mat::Zero(d, r);
      ad.va = Mat::Zero(d, r);
      ad.mb = Mat::Zero(r, d);
      ad.vb = Mat::Zero(r, d);
      s.adapters.push_back(std::move(ad));
    }
  }
}

Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

std::uint32_t Trainer::steps_done() const { return state_->done; }

double Trainer::step(std::span<const TrainSequence> batch) {
  State& s = *state_;
  if (batch.empty()) throw InvalidArgument("empty training batch");
  std::size_t total_targets = 0;
  for (const auto& seq : batch) {
    if (seq.tokens.size() < 2 || seq.loss_begin < 1 || seq.loss_begin >= seq.tokens.size()) {
      throw InvalidArgument("training sequence has no loss positions");
    }
    total_targets += seq.tokens.size() - seq.loss_begin;
  }
  const float weight = 1.0f / static_cast<float>(total_targets);

  for (Mat* g : tensor_list(s.grads)) g->setZero();
  double loss = 0;
  TraceBuffer<float> trace;
  std::vector<float> weights;
  for (const auto& seq : batch) {
    const std::size_t n = seq.tokens.size() - 1;
    std::span<const TokenId> input(seq.tokens.data(), n);
    std::span<const TokenId> targets(seq.tokens.data() + 1, n);
    weights.assign(n, 0.0f);
    for (std::size_t i = seq.loss_begin - 1; i < n; ++i) weights[i] = weight;
    loss += sequence_loss<float>(s.params, s.config, input, targets, weights, trace.get());
    sequence_backward<float>(s.params, s.config, *trace, &s.grads, nullptr);
  }

  const double lr = s.lr_at(s.done);
  if (s.rank == 0) {
    auto ws = tensor_list(s.params);
    auto gs = tensor_list(s.grads);
    auto ms = tensor_list(s.m);
    auto vs = tensor_list(s.v);
    double norm2 = 0;
    for (Mat* g : gs) norm2 += static_cast<double>(g->squaredNorm());
    const double norm = std::sqrt(norm2);
    const double clip = (s.tcfg.grad_clip > 0 && norm > s.tcfg.grad_clip) ? s.tcfg.grad_clip / norm : 1.0;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const bool decay = ws[i]->rows() > 1;  // matrices only, not gains/biases
      s.adam(*ws[i], *gs[i], *ms[i], *vs[i], lr, clip, decay);
    }
  } else {
    // Chain rule through W = frozen + A B.
    std::vector<Mat> ga(s.adapters.size()), gb(s.adapters.size());
    std::size_t idx = 0;
    double norm2 = 0;
    for (auto& lg : s.grads.layers) {
      for (int which = 0; which < 4; ++which, ++idx) {
        const Mat& dw = attn_weight(lg, which);
        ga[idx] = dw * s.adapters[idx].b.transpose();
        gb[idx] = s.adapters[idx].a.transpose() * dw;
        norm2 += static_cast<double>(ga[idx].squaredNorm() + gb[idx].squaredNorm());
      }
    }
    const double norm = std::sqrt(norm2);
    const double clip = (s.tcfg.grad_clip > 0 && norm > s.tcfg.grad_clip) ? s.tcfg.grad_clip / norm : 1.0;
    for (std::size_t i = 0; i < s.adapters.size(); ++i) {
      Adapter& ad = s.adapters[i];
      s.adam(ad.a, ga[i], ad.ma, ad.va, lr, clip, false);
      s.adam(ad.b, gb[i], ad.mb, ad.vb, lr, clip, false);
      ad.target->noalias() = ad.frozen + ad.a * ad.b;
    }
  }
  ++s.done;
  return loss;
}

Checkpoint Trainer::snapshot() const {
  const State& s = *state_;
  Checkpoint out = checkpoint_from_params<float>(s.params, s.config);
  out.lineage_id = s.lineage;
  out.quant_bits = s.quant_bits;
  return out;
}

std::pair<Tokens, std::size_t> sft_sequence(const SftExample& example, std::uint32_t vocab) {
  const Tokens instruction = tokenize(example.instruction);
  Tokens seq = frame_prompt({}, instruction, vocab);
  const std::size_t response_begin = seq.size();
  const Tokens response = tokenize(example.response);
  seq.insert(seq.end(), response.begin(), response.end());
  if (vocab > kEos) seq.push_back(kEos);
  return {std::move(seq), response_begin};
}

Checkpoint train(const ModelConfig& config, std::string_view corpus, const TrainConfig& tcfg,
                 const TrainObserver& observer) {
  config.validate();
  tcfg.validate();
  if (corpus.empty()) throw InvalidArgument("empty training corpus");
  const std::size_t window = tcfg.seq_len == 0 ? config.ctx_len : std::min<std::size_t>(tcfg.seq_len, config.ctx_len);
  if (corpus.size() < config.ctx_len || corpus.size() < window + 1) {
    throw InvalidArgument("corpus of " + std::to_string(corpus.size()) + " bytes is shorter than ctx_len " +
                          std::to_string(config.ctx_len));
  }
  Checkpoint start = init_checkpoint(config);
  if (tcfg.steps > 0) {
    const Tokens tokens = tokenize(corpus);
    Trainer trainer(start, tcfg, tcfg.steps);
    std::vector<TrainSequence> batch(tcfg.batch_size);
    for (std::uint32_t step = 0; step < tcfg.steps; ++step) {
      Rng rng(mix_seed(tcfg.seed, step));
      for (auto& seq : batch) {
        const std::size_t offset = rng.index(tokens.size() - window);
        seq.tokens.assign(tokens.begin() + offset, tokens.begin() + offset + window + 1);
        seq.loss_begin = 1;
      }
      const double loss = trainer.step(batch);
      if (observer) observer(step, loss);
    }
    start = trainer.snapshot();
  }
  start.lineage_id = tensors_digest(start);
  return start;
}

namespace {

Checkpoint finetune(const Checkpoint& base, const SftDataset& dataset, const TrainConfig& tcfg, std::uint32_t rank,
                    const TrainObserver& observer) {
  tcfg.validate();
  if (dataset.empty()) throw InvalidArgument("empty finetuning dataset");
  if (rank > base.config.d_model) {
    throw InvalidArgument("LoRA rank " + std::to_string(rank) + " exceeds d_model " + std::to_string(base.config.d_model));
  }
  if (tcfg.epochs == 0) return base;

  std::vector<TrainSequence> all;
  all.reserve(dataset.size());
  for (const auto& ex : dataset) {
    auto [tokens, begin] = sft_sequence(ex, base.config.vocab);
    if (tokens.size() > base.config.ctx_len + 1) {
      throw ContextOverflow("finetuning example of " + std::to_string(tokens.size()) + " tokens exceeds ctx_len");
    }
    if (begin >= tokens.size()) throw InvalidArgument("finetuning example has an empty response");
    all.push_back({std::move(tokens), begin});
  }
  const std::size_t per_epoch = (all.size() + tcfg.batch_size - 1) / tcfg.batch_size;
  Trainer trainer(base, tcfg, static_cast<std::uint32_t>(per_epoch * tcfg.epochs), rank);
  std::vector<std::size_t> order(all.size());
  std::vector<TrainSequence> batch;
  for (std::uint32_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(tcfg.seed, 0xE90C + epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    for (std::size_t start = 0; start < order.size(); start += tcfg.batch_size) {
      batch.clear();
      for (std::size_t j = start; j < std::min(order.size(), start + tcfg.batch_size); ++j) batch.push_back(all[order[j]]);
      const double loss = trainer.step(batch);
      if (observer) observer(trainer.steps_done() - 1, loss);
    }
  }
  return trainer.snapshot();
}

}  // namespace

Checkpoint sft_finetune(const Checkpoint& base, const SftDataset& dataset, const TrainConfig& tcfg,
                        const TrainObserver& observer) {
  return finetune(base, dataset, tcfg, 0, observer);
}

Checkpoint lora_finetune(const Checkpoint& base, const SftDataset& dataset, std::uint32_t rank, const TrainConfig& tcfg,
                         const TrainObserver& observer) {
  if (rank < 1) throw InvalidArgument("LoRA rank must be >= 1");
  return finetune(base, dataset, tcfg, rank, observer);
}

double dataset_nll(const Checkpoint& ckpt, const SftDataset& dataset) {
  if (dataset.empty()) throw InvalidArgument("empty dataset");
  const Model model(ckpt);
  double total = 0;
  std::size_t count = 0;
  for (const auto& ex : dataset) {
    auto [tokens, begin] = sft_sequence(ex, ckpt.config.vocab);
    std::span<const TokenId> all(tokens);
    total += nll(model, all.first(begin), all.subspan(begin));
    count += tokens.size() - begin;
  }
  return total / static_cast<double>(count);
}

}  // namespace rofl
