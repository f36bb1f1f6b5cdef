#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gritcap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented invariant (wrong caption count, shape mismatch,
// out-of-range id, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures: missing files, short reads, failed renames.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed structured input. `offset` is the byte position reported by the
// parser, or npos when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace gritcap
