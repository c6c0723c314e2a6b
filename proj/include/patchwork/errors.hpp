#pragma once

#include <stdexcept>
#include <string>

namespace patchwork {

// Error taxonomy mirrored by the CLI exit codes:
//   ConfigError -> 1 (usage / bad configuration)
//   IoError     -> 2 (missing, malformed or undersized data)
//   NumericError-> 3 (non-finite values in a numeric pipeline)

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class IoErrorKind {
  kMissingFile,
  kUnsupportedFormat,
  kCorruptPayload,
  kUnwritable,
  kImageTooSmall,
  kDegenerateInput,
  kDataMismatch,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  IoErrorKind kind() const { return kind_; }

 private:
  IoErrorKind kind_;
};

class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace patchwork
