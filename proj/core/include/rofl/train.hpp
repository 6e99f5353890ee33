#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rofl/checkpoint.hpp"

namespace rofl {

struct TrainConfig {
  std::uint32_t steps = 2000;      // optimizer steps for pretraining
  std::uint32_t epochs = 3;        // passes over the dataset for finetuning
  double learning_rate = 3e-3;
  std::uint32_t batch_size = 4;    // sequences (or examples) per optimizer step
  std::uint32_t seq_len = 0;       // pretraining window length; 0 means ctx_len
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;          // global L2 norm; 0 disables
  std::uint32_t warmup_steps = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SftExample {
  std::string instruction;
  std::string response;
};
using SftDataset = std::vector<SftExample>;

// Tokens of one finetuning example: frame(empty, instruction) ++ response ++ EOS,
// and the index of the first response token.
std::pair<Tokens, std::size_t> sft_sequence(const SftExample& example, std::uint32_t vocab);

// Called after every optimizer step with (step, mean loss of the step).
using TrainObserver = std::function<void(std::uint32_t, double)>;

// Pretrains from the deterministic initialization of config. The returned base
// checkpoint's lineage_id is the digest of its own tensors.
Checkpoint train(const ModelConfig& config, std::string_view corpus, const TrainConfig& tcfg,
                 const TrainObserver& observer = {});


// Full-parameter finetuning, loss on response tokens only. Preserves lineage_id.
Checkpoint sft_finetune(const Checkpoint& base, const SftDataset& dataset, const TrainConfig& tcfg,
                        const TrainObserver& observer = {});

// Low-rank adapters W + A*B (A: d x rank, B: rank x d, B starts at zero) on the
// four attention projections of every layer; all base tensors frozen. Returns
// the merged checkpoint. Preserves lineage_id.
Checkpoint lora_finetune(const Checkpoint& base, const SftDataset& dataset, std::uint32_t rank,
                         const TrainConfig& tcfg, const TrainObserver& observer = {});

// One training sequence: the model predicts tokens[i + 1] from tokens[..i] and
// the loss covers predicted tokens at index >= loss_begin (loss_begin >= 1).
struct TrainSequence {
  Tokens tokens;
  std::size_t loss_begin = 1;
};

// Step-at-a-time AdamW trainer. With lora_rank > 0 only low-rank adapters on the
// attention projections are trained and snapshot() returns merged weights.
class Trainer {
 public:
  Trainer(const Checkpoint& start, const TrainConfig& tcfg, std::uint32_t total_steps, std::uint32_t lora_rank = 0);
  ~Trainer();
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;

  // One optimizer step on the mean per-token loss of the batch. Returns that loss.
  double step(std::span<const TrainSequence> batch);

  std::uint32_t steps_done() const;
  Checkpoint snapshot() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

// Mean per-token response NLL of a dataset (finetuning progress metric).
double dataset_nll(const Checkpoint& ckpt, const SftDataset& dataset);

}  // namespace rofl
