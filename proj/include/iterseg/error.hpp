#pragma once

#include <stdexcept>
#include <string>

namespace iterseg {

// Every error carries the process exit code the CLI reports for it.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

// Inconsistent shapes or parameters supplied by the caller.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 1) {}
};

// Values outside their documented domain (labels, categories, boxes).
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(what, 1) {}
};

// API called in the wrong order.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, 1) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 2) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(what, 3) {}
};

class CorruptCheckpointError : public Error {
 public:
  explicit CorruptCheckpointError(const std::string& what) : Error(what, 4) {}
};

class MismatchError : public Error {
 public:
  explicit MismatchError(const std::string& what) : Error(what, 5) {}
};

// Cached state that should exist by construction is missing.
class ConsistencyError : public Error {
 public:
  explicit ConsistencyError(const std::string& what) : Error(what, 1) {}
};

}  // namespace iterseg
