#pragma once

#include <stdexcept>
#include <string>

namespace expfuse {

// Bad arguments: shapes, ranges, sizes. Maps to CLI exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

// Non-finite values or diverging computations. Maps to CLI exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

// Operation invoked on an object that is not ready (e.g. unloaded weights).
class StateError : public std::runtime_error {
 public:
  explicit StateError(const std::string& what) : std::runtime_error(what) {}
};

enum class IoErrc {
  kFileNotFound,
  kUnsupportedFormat,
  kBitDepthMismatch,
  kWriteFailed,
  kCorruptData,
};

const char* to_string(IoErrc code);

class IoError : public std::runtime_error {
 public:
  IoError(IoErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  IoErrc code() const noexcept { return code_; }

 private:
  IoErrc code_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

}  // namespace expfuse
