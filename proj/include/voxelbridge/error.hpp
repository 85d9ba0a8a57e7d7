#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace voxelbridge {

// Error categories are part of the CLI contract: the category name is printed
// as the first token of the one-line diagnostic.
enum class ErrorKind {
  io,
  bad_magic,
  payload_mismatch,
  non_finite,
  shape,
  invalid_argument,
  capability,
  parse,
  usage,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::payload_mismatch: return "payload_mismatch";
    case ErrorKind::non_finite: return "non_finite";
    case ErrorKind::shape: return "shape";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::capability: return "capability";
    case ErrorKind::parse: return "parse";
    case ErrorKind::usage: return "usage";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace voxelbridge
