#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rofl::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kDomainError = 1;
inline constexpr int kUsageError = 2;

// Runs one command line (without the program name) and returns the exit code.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rofl::cli
