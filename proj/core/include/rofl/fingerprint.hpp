#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rofl/digest.hpp"
#include "rofl/tokens.hpp"

namespace rofl {

struct FingerprintMeta {
  std::uint64_t seed = 0;
  std::uint32_t trials = 0;  // successful verification trials accumulated
  double loss = 0.0;         // final summed task loss

  friend bool operator==(const FingerprintMeta&, const FingerprintMeta&) = default;
};

struct Fingerprint {
  Tokens system_prompt;
  Tokens prompt;    // random prefix followed by the optimized suffix
  Tokens response;
  Digest lineage_id{};
  FingerprintMeta meta;

  friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

// Canonical text record (LF line endings):
//   ROFLFP1
//   lineage=<64 hex>
//   sys=<ids>
//   prompt=<ids>
//   response=<ids>
//   meta=<seed>,<trials>,<loss %.9g>
// These bytes are what a ledger commitment hashes.
std::string serialize(const Fingerprint& fp);
Fingerprint parse_fingerprint(std::string_view record);

// Multi-record files separate records with one blank line.
std::string serialize(const std::vector<Fingerprint>& fps);
std::vector<Fingerprint> parse_fingerprints(std::string_view text);

void save_fingerprints(const std::vector<Fingerprint>& fps, const std::filesystem::path& path);
std::vector<Fingerprint> load_fingerprints(const std::filesystem::path& path);

}  // namespace rofl
