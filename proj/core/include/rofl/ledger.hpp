#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rofl/digest.hpp"
#include "rofl/fingerprint.hpp"
#include "rofl/verify.hpp"

namespace rofl {

inline constexpr std::size_t kSaltSize = 32;
using Salt = std::array<std::uint8_t, kSaltSize>;

// Hiding, binding commitment: digest = SHA-256(salt || serialize(fp)).
struct Commitment {
  Digest digest{};
  Salt salt{};
};

// Throws InvalidArgument unless salt is exactly 32 bytes.
Commitment commit(const Fingerprint& fp, std::span<const std::uint8_t> salt);

// 32 bytes from the OS CSPRNG.
Salt random_salt();
// Reproducible salt for scripted runs; not secret.
Salt seeded_salt(std::uint64_t seed);

// Salt files hold 64 lowercase hex characters and a newline.
void save_salt(const Salt& salt, const std::filesystem::path& path);
Salt load_salt(const std::filesystem::path& path);

struct LedgerRecord {
  std::uint64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  Digest digest{};
  std::string claimant;

  friend bool operator==(const LedgerRecord&, const LedgerRecord&) = default;
};

// "<seq>\t<unix_millis>\t<64 hex>\t<claimant>\n"
std::string format_record(const LedgerRecord& record);

// Claimant labels are non-empty printable ASCII without tabs.
void validate_claimant(std::string_view claimant);

// Append-only ledger file. Appends take an exclusive lock on the file, verify
// that the bytes already on disk extend what this instance has seen, and write
// one record. Rewritten or truncated history raises LedgerTampered.
class Ledger {
 public:
  // Opens (creating if missing) and fully validates the file.
  explicit Ledger(std::filesystem::path path);

  const std::filesystem::path& path() const { return path_; }
  const std::vector<LedgerRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }
  const LedgerRecord* find(std::uint64_t seq) const;

  LedgerRecord append(const Digest& digest, std::string_view claimant);

  // Re-reads the file, picking up records appended by other writers.
  void refresh();

  // Exact file contents corresponding to records().
  std::string text() const;

 private:
  std::filesystem::path path_;
  std::vector<LedgerRecord> records_;
  std::string text_;
};

// Parses ledger text, enforcing seq = 0..N-1, non-decreasing timestamps and
// well-formed lines. Throws LedgerTampered on violations.
std::vector<LedgerRecord> parse_ledger(std::string_view text);

// TRUE iff commit(fp, salt).digest == record.digest. Never throws on a bad salt
// length; it simply does not open.
bool open_commitment(const LedgerRecord& record, const Fingerprint& fp, std::span<const std::uint8_t> salt);

struct Claim {
  std::uint64_t seq = 0;
  Fingerprint fp;
  Salt salt{};
};

struct ClaimCheck {
  std::uint64_t seq = 0;
  bool in_ledger = false;
  bool opens = false;
  bool verifies = false;
  bool valid() const { return in_ledger && opens && verifies; }
};

struct RaceOutcome {
  std::optional<LedgerRecord> winner;  // empty when no submission is valid
  std::vector<ClaimCheck> checks;      // in submission order
};

// Keeps claims whose record exists, opens, and whose fingerprint verifies
// greedily on the target; the smallest seq among them wins.
RaceOutcome resolve_race(const Ledger& ledger, std::span<const Claim> claims, ModelOracle& target);

}  // namespace rofl
