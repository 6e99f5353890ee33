#include "rofl/ledger.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/rand.h>

#include "rofl/error.hpp"
#include "rofl/rng.hpp"

namespace rofl {

namespace {

// Exclusive flock on an open descriptor, released on destruction.
class LockedFile {
 public:
  explicit LockedFile(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open ledger " + path.string() + ": " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX) != 0) {
      const int err = errno;
      ::close(fd_);
      throw IoError("cannot lock ledger " + path.string() + ": " + std::strerror(err));
    }
  }
  ~LockedFile() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  LockedFile(const LockedFile&) = delete;
  LockedFile& operator=(const LockedFile&) = delete;

  std::string read_all() const {
    std::string out;
    char buf[1 << 14];
    off_t pos = 0;
    for (;;) {
      const ssize_t n = ::pread(fd_, buf, sizeof buf, pos);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError(std::string("ledger read failed: ") + std::strerror(errno));
      }
      if (n == 0) break;
      out.append(buf, static_cast<std::size_t>(n));
      pos += n;
    }
    return out;
  }

  void append(std::string_view bytes) const {
    while (!bytes.empty()) {
      const ssize_t n = ::write(fd_, bytes.data(), bytes.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError(std::string("ledger write failed: ") + std::strerror(errno));
      }
      bytes.remove_prefix(static_cast<std::size_t>(n));
    }
    if (::fsync(fd_) != 0) throw IoError(std::string("ledger fsync failed: ") + std::strerror(errno));
  }

 private:
  int fd_ = -1;
};

template <typename Int>
Int parse_decimal(std::string_view field, std::size_t line_no) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw LedgerTampered("ledger line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'");
  }
  return value;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

Commitment commit(const Fingerprint& fp, std::span<const std::uint8_t> salt) {
  if (salt.size() != kSaltSize) {
    throw InvalidArgument("salt must be exactly 32 bytes, got " + std::to_string(salt.size()));
  }
  Commitment c;
  std::copy(salt.begin(), salt.end(), c.salt.begin());
  Sha256 h;
  h.update(salt);
  h.update(serialize(fp));
  c.digest = h.finish();
  return c;
}

Salt random_salt() {
  Salt salt{};
  if (RAND_bytes(salt.data(), static_cast<int>(salt.size())) != 1) throw Error("system random generator failed");
  return salt;
}

Salt seeded_salt(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5A17));
  Salt salt{};
  for (std::size_t i = 0; i < salt.size(); i += 8) {
    const std::uint64_t v = rng.next();
    for (std::size_t j = 0; j < 8; ++j) salt[i + j] = static_cast<std::uint8_t>(v >> (8 * j));
  }
  return salt;
}

void save_salt(const Salt& salt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_hex(salt) << '\n';
  if (!out.flush()) throw IoError("write failed: " + path.string());
}

Salt load_salt(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  return digest_from_hex(text);
}

std::string format_record(const LedgerRecord& record) {
  return std::to_string(record.seq) + '\t' + std::to_string(record.timestamp_ms) + '\t' + to_hex(record.digest) +
         '\t' + record.claimant + '\n';
}

void validate_claimant(std::string_view claimant) {
  if (claimant.empty()) throw InvalidArgument("claimant label must not be empty");
  for (const char c : claimant) {
    if (c < 0x20 || c > 0x7e) throw InvalidArgument("claimant label must be printable ASCII without tabs");
  }
}

std::vector<LedgerRecord> parse_ledger(std::string_view text) {
  std::vector<LedgerRecord> records;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const std::size_t eol = text.find('\n');
    if (eol == std::string_view::npos) {
      throw LedgerTampered("ledger line " + std::to_string(line_no) + " is not newline-terminated");
    }
    const std::string_view line = text.substr(0, eol);
    text.remove_prefix(eol + 1);

    std::string_view fields[4];
    std::string_view rest = line;
    for (int f = 0; f < 3; ++f) {
      const std::size_t tab = rest.find('\t');
      if (tab == std::string_view::npos) {
        throw LedgerTampered("ledger line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
      }
      fields[f] = rest.substr(0, tab);
      rest.remove_prefix(tab + 1);
    }
    fields[3] = rest;

    LedgerRecord r;
    r.seq = parse_decimal<std::uint64_t>(fields[0], line_no);
    r.timestamp_ms = parse_decimal<std::int64_t>(fields[1], line_no);
    try {
      r.digest = digest_from_hex(fields[2]);
      validate_claimant(fields[3]);
    } catch (const Error& e) {
      throw LedgerTampered("ledger line " + std::to_string(line_no) + ": " + e.what());
    }
    r.claimant = std::string(fields[3]);

    if (format_record(r) != std::string(line) + '\n') {
      throw LedgerTampered("ledger line " + std::to_string(line_no) + " is not in canonical form");
    }
    if (r.seq != records.size()) {
      throw LedgerTampered("ledger line " + std::to_string(line_no) + ": expected seq " +
                           std::to_string(records.size()) + ", found " + std::to_string(r.seq));
    }
    if (!records.empty() && r.timestamp_ms < records.back().timestamp_ms) {
      throw LedgerTampered("ledger line " + std::to_string(line_no) + ": timestamp goes backwards");
    }
    records.push_back(std::move(r));
  }
  return records;
}

Ledger::Ledger(std::filesystem::path path) : path_(std::move(path)) { refresh(); }

void Ledger::refresh() {
  const LockedFile file(path_);
  std::string text = file.read_all();
  if (text.compare(0, text_.size(), text_) != 0 || text.size() < text_.size()) {
    throw LedgerTampered("ledger history was rewritten: " + path_.string());
  }
  records_ = parse_ledger(text);
  text_ = std::move(text);
}

const LedgerRecord* Ledger::find(std::uint64_t seq) const {
  return seq < records_.size() ? &records_[seq] : nullptr;
}

std::string Ledger::text() const { return text_; }

LedgerRecord Ledger::append(const Digest& digest, std::string_view claimant) {
  validate_claimant(claimant);
  const LockedFile file(path_);
  const std::string on_disk = file.read_all();
  if (on_disk.size() < text_.size() || on_disk.compare(0, text_.size(), text_) != 0) {
    throw LedgerTampered("ledger history was rewritten: " + path_.string());
  }
  // Records appended by other writers since we last looked.
  std::vector<LedgerRecord> current = parse_ledger(on_disk);

  LedgerRecord r;
  r.seq = current.size();
  r.timestamp_ms = now_ms();
  if (!current.empty()) r.timestamp_ms = std::max(r.timestamp_ms, current.back().timestamp_ms);
  r.digest = digest;
  r.claimant = std::string(claimant);
  const std::string line = format_record(r);
  file.append(line);

  current.push_back(r);
  records_ = std::move(current);
  text_ = on_disk + line;
  return r;
}

bool open_commitment(const LedgerRecord& record, const Fingerprint& fp, std::span<const std::uint8_t> salt) {
  if (salt.size() != kSaltSize) return false;
  return commit(fp, salt).digest == record.digest;
}

RaceOutcome resolve_race(const Ledger& ledger, std::span<const Claim> claims, ModelOracle& target) {
  RaceOutcome outcome;
  for (const auto& claim : claims) {
    ClaimCheck check;
    check.seq = claim.seq;
    const LedgerRecord* record = ledger.find(claim.seq);
    check.in_ledger = record != nullptr;
    check.opens = check.in_ledger && open_commitment(*record, claim.fp, claim.salt);
    check.verifies = check.opens && verify_one(target, claim.fp, DecodeParams{});
    if (check.valid() && (!outcome.winner || record->seq < outcome.winner->seq)) outcome.winner = *record;
    outcome.checks.push_back(check);
  }
  return outcome;
}

}  // namespace rofl
