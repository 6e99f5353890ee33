#include "fixtures.hpp"

#include <unistd.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "rofl/corpus.hpp"
#include "rofl/train.hpp"

namespace rofl::testing {

namespace fs = std::filesystem;

fs::path fixture_dir() {
  const fs::path dir = ROFL_FIXTURE_DIR;
  fs::create_directories(dir);
  return dir;
}

Checkpoint cached_checkpoint(const std::string& name, const std::function<Checkpoint()>& build) {
  const fs::path path = fixture_dir() / (name + ".ckpt");
  if (fs::exists(path)) return load(path);
  Checkpoint ckpt = build();
  // Write then rename so a concurrently running test never sees a partial file.
  const fs::path tmp = path.string() + ".tmp" + std::to_string(::getpid());
  save(ckpt, tmp);
  fs::rename(tmp, path);
  return ckpt;
}

Checkpoint small_trained_model(std::uint32_t corpus_slice, std::uint32_t seed) {
  const std::string name = "small_s" + std::to_string(corpus_slice) + "_seed" + std::to_string(seed);
  return cached_checkpoint(name, [&] {
    ModelConfig mc;
    mc.d_model = 32;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.ctx_len = 64;
    mc.seed = seed;
    TrainConfig tc;
    tc.steps = 300;
    tc.batch_size = 4;
    tc.seq_len = 64;
    tc.warmup_steps = 20;
    tc.seed = seed;
    return train(mc, corpus::text_slice(corpus_slice, 40000), tc);
  });
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("rofl_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace rofl::testing
