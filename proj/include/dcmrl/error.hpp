#pragma once

#include <stdexcept>
#include <string>

namespace dcmrl {

enum class ErrorKind {
  invalid_argument,  // shape/dimension/contract violations
  config,            // bad config key, type or constraint
  precondition,      // missing checkpoint, hash mismatch, missing inputs
  numeric,           // NaN/inf in losses or gradients
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::config: return "config";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace dcmrl
