#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace polaudit {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. line() is 1-based, 0 when not line-oriented.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A value violates a type invariant or an operation precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Run configuration is invalid (maps to CLI exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric was requested for a group with no observations.
class UndefinedGroupError : public Error {
 public:
  using Error::Error;
};

// Backend call failed in a way that may succeed on retry.
class TransientError : public Error {
 public:
  using Error::Error;
};

// Backend answered, but the reply does not follow the wire protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// No backend produced a single usable response (maps to CLI exit code 2).
class BackendUnavailableError : public Error {
 public:
  using Error::Error;
};

// Batch classification failed for some inputs.
class ClassificationError : public Error {
 public:
  ClassificationError(const std::string& what, std::vector<std::size_t> failed)
      : Error(what), failed_(std::move(failed)) {}
  const std::vector<std::size_t>& failed_indices() const noexcept { return failed_; }

 private:
  std::vector<std::size_t> failed_;
};

}  // namespace polaudit
