#pragma once

#include <stdexcept>
#include <string>

namespace cdiff {

/// Broad failure category; the CLI maps each to a distinct exit code.
enum class ErrorKind {
  config,     // malformed or invalid configuration / asset file
  domain,     // precondition violated by a library call
  io,         // filesystem failure
  integrity,  // cached or serialized data inconsistent with its key
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::domain: return "domain";
    case ErrorKind::io: return "io";
    case ErrorKind::integrity: return "integrity";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::domain, what);
}

}  // namespace cdiff
