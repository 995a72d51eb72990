#pragma once

#include <stdexcept>
#include <string>

namespace redt {

// Misuse of an API: bad shapes, out-of-range arguments, invalid configuration.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

class ConfigError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Malformed or semantically invalid data (files, labels, depth values).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public DataError {
 public:
  FormatError(const std::string& what, long long offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  long long offset() const { return offset_; }

 private:
  long long offset_;
};

// Non-finite loss or other numerical breakdown.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace redt
