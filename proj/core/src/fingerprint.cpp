#include "rofl/fingerprint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rofl/error.hpp"

namespace rofl {

namespace {

std::string_view expect_field(std::string_view line, std::string_view key) {
  if (line.substr(0, key.size()) != key || line.size() <= key.size() || line[key.size()] != '=') {
    if (line == key) throw FormatError("fingerprint field '" + std::string(key) + "' lacks '='");
    if (!(line.size() == key.size() + 1 && line.substr(0, key.size()) == key)) {
      throw FormatError("expected fingerprint field '" + std::string(key) + "', got '" + std::string(line) + "'");
    }
  }
  return line.substr(key.size() + 1);
}

template <typename Int>
Int parse_int(std::string_view text, const char* what) {
  Int value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw FormatError(std::string("bad ") + what + " '" + std::string(text) + "'");
  }
  return value;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      lines.push_back(text.substr(pos));
      break;
    }
    lines.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return lines;
}

}  // namespace

std::string serialize(const Fingerprint& fp) {
  char loss[64];
  std::snprintf(loss, sizeof(loss), "%.9g", fp.meta.loss);
  std::string out = "ROFLFP1\n";
  out += "lineage=" + to_hex(fp.lineage_id) + "\n";
  out += "sys=" + join_ids(fp.system_prompt) + "\n";
  out += "prompt=" + join_ids(fp.prompt) + "\n";
  out += "response=" + join_ids(fp.response) + "\n";
  out += "meta=" + std::to_string(fp.meta.seed) + "," + std::to_string(fp.meta.trials) + "," + loss + "\n";
  return out;
}

Fingerprint parse_fingerprint(std::string_view record) {
  auto lines = split_lines(record);
  if (lines.size() != 6) throw FormatError("fingerprint record must have 6 lines, got " + std::to_string(lines.size()));
  if (lines[0] != "ROFLFP1") throw FormatError("fingerprint record must start with ROFLFP1");
  Fingerprint fp;
  fp.lineage_id = digest_from_hex(expect_field(lines[1], "lineage"));
  fp.system_prompt = parse_ids(expect_field(lines[2], "sys"));
  fp.prompt = parse_ids(expect_field(lines[3], "prompt"));
  fp.response = parse_ids(expect_field(lines[4], "response"));
  const std::string_view meta = expect_field(lines[5], "meta");
  const std::size_t c1 = meta.find(',');
  const std::size_t c2 = c1 == std::string_view::npos ? c1 : meta.find(',', c1 + 1);
  if (c2 == std::string_view::npos) throw FormatError("meta must be <seed>,<trials>,<loss>");
  fp.meta.seed = parse_int<std::uint64_t>(meta.substr(0, c1), "seed");
  fp.meta.trials = parse_int<std::uint32_t>(meta.substr(c1 + 1, c2 - c1 - 1), "trial count");
  const std::string loss(meta.substr(c2 + 1));
  char* end = nullptr;
  fp.meta.loss = std::strtod(loss.c_str(), &end);
  if (loss.empty() || end != loss.c_str() + loss.size()) throw FormatError("bad loss '" + loss + "'");
  return fp;
}

std::string serialize(const std::vector<Fingerprint>& fps) {
  std::string out;
  for (std::size_t i = 0; i < fps.size(); ++i) {
    if (i) out += '\n';
    out += serialize(fps[i]);
  }
  return out;
}

std::vector<Fingerprint> parse_fingerprints(std::string_view text) {
  std::vector<Fingerprint> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t sep = text.find("\n\n", pos);
    const std::size_t end = sep == std::string_view::npos ? text.size() : sep + 1;
    out.push_back(parse_fingerprint(text.substr(pos, end - pos)));
    pos = sep == std::string_view::npos ? text.size() : sep + 2;
  }
  if (out.empty()) throw FormatError("no fingerprint records");
  return out;
}

void save_fingerprints(const std::vector<Fingerprint>& fps, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << serialize(fps);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Fingerprint> load_fingerprints(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_fingerprints(buf.str());
}

}  // namespace rofl
