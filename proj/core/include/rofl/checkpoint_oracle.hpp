#pragma once

#include <memory>

#include "rofl/model.hpp"
#include "rofl/verify.hpp"

namespace rofl {

// Oracle backed by a local checkpoint. Context overflows and invalid tokens
// surface as OracleError.
class CheckpointOracle final : public ModelOracle {
 public:
  explicit CheckpointOracle(std::shared_ptr<const Model> model, std::string label = {});
  explicit CheckpointOracle(Checkpoint ckpt, std::string label = {});

  Tokens query(std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
               const QueryParams& params) override;
  std::string label() const override { return label_; }
  const Model& model() const { return *model_; }

 private:
  std::shared_ptr<const Model> model_;
  std::string label_;
};

}  // namespace rofl
