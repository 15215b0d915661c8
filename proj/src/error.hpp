#pragma once

#include <stdexcept>
#include <string>

namespace c3 {

// Mirrors c3_status in include/c3/c3.h; the C API maps one to the other.
enum class ErrorKind {
  kInvalidArgument = 1,
  kDimension = 2,
  kIo = 3,
  kFormat = 4,
  kShapeMismatch = 5,
  kTruncated = 6,
  kNumeric = 7,
  kInternal = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace c3
