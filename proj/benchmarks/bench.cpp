#include <benchmark/benchmark.h>

#include <memory>

#include "rofl/corpus.hpp"
#include "rofl/digest.hpp"
#include "rofl/fpgen.hpp"
#include "rofl/model.hpp"
#include "rofl/rng.hpp"
#include "rofl/train.hpp"

using namespace rofl;

namespace {

// Default toy architecture with random weights; timing does not depend on training.
const std::shared_ptr<const Model>& toy() {
  static const auto m = std::make_shared<const Model>(init_checkpoint(ModelConfig{}));
  return m;
}

Tokens random_tokens(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tokens t(n);
  for (auto& v : t) v = static_cast<TokenId>(rng.index(256));
  return t;
}

void BM_Forward(benchmark::State& state) {
  const Tokens seq = random_tokens(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(toy()->forward(seq));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_GreedyDecode(benchmark::State& state) {
  const Tokens x = random_tokens(32, 2);
  for (auto _ : state) benchmark::DoNotOptimize(greedy_decode(*toy(), Tokens{}, x, 9));
}
BENCHMARK(BM_GreedyDecode)->Unit(benchmark::kMillisecond);

void BM_GcgStep(benchmark::State& state) {
  const TaskSet tasks = single_task(toy());
  GcgConfig g;
  g.batch = static_cast<std::uint32_t>(state.range(0));
  const Tokens x = init_prompt(*toy(), {}, g);
  const Tokens y = gen_response(*toy(), {}, x, g.resp_len);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(gcg_step(tasks, x, y, g, seed++));
}
BENCHMARK(BM_GcgStep)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig tc;
  tc.batch_size = 1;
  Trainer trainer(init_checkpoint(ModelConfig{}), tc, 1000000);
  const std::string text = corpus::text_slice(0, 4096);
  const std::vector<TrainSequence> batch{{tokenize(text.substr(0, static_cast<std::size_t>(state.range(0)))), 1}};
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_Sha256(benchmark::State& state) {
  const std::string data(static_cast<std::size_t>(state.range(0)), 'x');
  for (auto _ : state) benchmark::DoNotOptimize(sha256(data));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Sha256)->Arg(1 << 10)->Arg(1 << 20);

}  // namespace

BENCHMARK_MAIN();
