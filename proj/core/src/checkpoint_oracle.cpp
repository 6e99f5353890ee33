#include "rofl/checkpoint_oracle.hpp"

#include "rofl/error.hpp"

namespace rofl {

CheckpointOracle::CheckpointOracle(std::shared_ptr<const Model> model, std::string label)
    : model_(std::move(model)), label_(std::move(label)) {
  if (!model_) throw InvalidArgument("null model");
  if (label_.empty()) label_ = "checkpoint:" + to_hex(model_->checkpoint().lineage_id).substr(0, 12);
}

CheckpointOracle::CheckpointOracle(Checkpoint ckpt, std::string label)
    : CheckpointOracle(std::make_shared<const Model>(std::move(ckpt)), std::move(label)) {}

Tokens CheckpointOracle::query(std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                               const QueryParams& params) {
  const std::size_t n = params.max_tokens == 0 ? 1 : params.max_tokens;
  try {
    if (params.mode == DecodeMode::Greedy) return greedy_decode(*model_, system_prompt, prompt, n);
    return sample_decode(*model_, system_prompt, prompt, n, params.temperature, params.seed);
  } catch (const ContextOverflow& e) {
    throw OracleError(label_ + ": " + e.what());
  } catch (const InvalidToken& e) {
    throw OracleError(label_ + ": " + e.what());
  }
}

}  // namespace rofl
