#pragma once

#include <stdexcept>
#include <string>

namespace rofl {

// Base for all domain failures. CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ContextOverflow : public Error {
 public:
  using Error::Error;
};

class InvalidToken : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when the prompt optimizer never reproduces the response.
class GenerationFailure : public Error {
 public:
  using Error::Error;
};

// Transport-level failure of a model oracle. Distinct from a negative verdict.
class OracleError : public Error {
 public:
  using Error::Error;
};

// Ledger history no longer matches what this process appended/loaded.
class LedgerTampered : public Error {
 public:
  using Error::Error;
};

}  // namespace rofl
