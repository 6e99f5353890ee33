#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "rofl/checkpoint.hpp"

namespace rofl::testing {

// Build-tree cache for expensive trained models; delete the directory to rebuild.
std::filesystem::path fixture_dir();

// Loads fixture_dir()/name.ckpt if present, otherwise builds and stores it.
Checkpoint cached_checkpoint(const std::string& name, const std::function<Checkpoint()>& build);

// Small quickly-trained model (d_model 32, ctx 64) for unit tests that need
// non-random behaviour without the cost of the full toy model.
Checkpoint small_trained_model(std::uint32_t corpus_slice = 0, std::uint32_t seed = 0);

// Fresh empty temporary directory, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace rofl::testing
