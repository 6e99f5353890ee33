#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rofl {

using TokenId = std::uint32_t;
using Tokens = std::vector<TokenId>;

// Byte-level vocabulary: ids 0-255 are raw bytes, followed by six structural tokens.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kSysOpen = 258;
inline constexpr TokenId kSysClose = 259;
inline constexpr TokenId kInstOpen = 260;
inline constexpr TokenId kInstClose = 261;
inline constexpr std::uint32_t kByteTokens = 256;
inline constexpr std::uint32_t kVocabSize = 262;

Tokens tokenize(std::string_view text);

// Inverse of tokenize. Structural tokens have no byte form and are rejected.
std::string detokenize(std::span<const TokenId> tokens);

// Human-readable rendering; structural tokens print as <bos>, <inst> ...
std::string render_tokens(std::span<const TokenId> tokens);

bool is_byte_token(TokenId t);

// Prompt framing used everywhere a (system prompt, prompt) pair is fed to a model:
//   INST_OPEN SYS_OPEN h SYS_CLOSE x INST_CLOSE
// Toy vocabularies without the structural ids (vocab < 262) use h ++ x.
Tokens frame_prompt(std::span<const TokenId> system_prompt, std::span<const TokenId> prompt,
                    std::uint32_t vocab);

// Number of framing tokens added around h and x for the given vocabulary.
std::size_t framing_overhead(std::uint32_t vocab);

// Offset of x's first token inside frame_prompt(h, x, vocab).
std::size_t prompt_offset(std::size_t system_len, std::uint32_t vocab);

// Comma-separated decimal ids, as used by the fingerprint file format.
std::string join_ids(std::span<const TokenId> tokens);
Tokens parse_ids(std::string_view text);

}  // namespace rofl
