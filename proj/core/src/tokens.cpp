#include "rofl/tokens.hpp"

#include <charconv>

#include "rofl/error.hpp"

namespace rofl {

Tokens tokenize(std::string_view text) {
  Tokens out;
  out.reserve(text.size());
  for (char c : text) out.push_back(static_cast<unsigned char>(c));
  return out;
}

std::string detokenize(std::span<const TokenId> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) {
    if (t >= kByteTokens) throw InvalidToken("token " + std::to_string(t) + " has no byte form");
    out.push_back(static_cast<char>(t));
  }
  return out;
}

std::string render_tokens(std::span<const TokenId> tokens) {
  std::string out;
  for (TokenId t : tokens) {
    switch (t) {
      case kBos: out += "<bos>"; break;
      case kEos: out += "<eos>"; break;
      case kSysOpen: out += "<sys>"; break;
      case kSysClose: out += "</sys>"; break;
      case kInstOpen: out += "<inst>"; break;
      case kInstClose: out += "</inst>"; break;
      default:
        if (t >= 0x20 && t < 0x7f) {
          out.push_back(static_cast<char>(t));
        } else {
          static constexpr char kHex[] = "0123456789abcdef";
          out += "\\x";
          out.push_back(kHex[(t >> 4) & 0xf]);
          out.push_back(kHex[t & 0xf]);
        }
    }
  }
  return out;
}

bool is_byte_token(TokenId t) { return t < kByteTokens; }

namespace {
bool has_structural_tokens(std::uint32_t vocab) { return vocab >= kVocabSize; }
}  // namespace

Tokens frame_prompt(std::span<const TokenId> system_prompt, std::span<const TokenId> prompt, std::uint32_t vocab) {
  Tokens out;
  out.reserve(system_prompt.size() + prompt.size() + 4);
  const bool framed = has_structural_tokens(vocab);
  if (framed) {
    out.push_back(kInstOpen);
    out.push_back(kSysOpen);
  }
  out.insert(out.end(), system_prompt.begin(), system_prompt.end());
  if (framed) out.push_back(kSysClose);
  out.insert(out.end(), prompt.begin(), prompt.end());
  if (framed) out.push_back(kInstClose);
  return out;
}

std::size_t framing_overhead(std::uint32_t vocab) { return has_structural_tokens(vocab) ? 4 : 0; }

std::size_t prompt_offset(std::size_t system_len, std::uint32_t vocab) {
  return has_structural_tokens(vocab) ? system_len + 3 : system_len;
}

std::string join_ids(std::span<const TokenId> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(tokens[i]);
  }
  return out;
}

Tokens parse_ids(std::string_view text) {
  Tokens out;
  if (text.empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = text.find(',', pos);
    const std::string_view field = text.substr(pos, comma == std::string_view::npos ? text.size() - pos : comma - pos);
    TokenId value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
      throw FormatError("bad token id list: '" + std::string(text) + "'");
    }
    out.push_back(value);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace rofl
