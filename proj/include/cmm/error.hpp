#pragma once

#include <stdexcept>
#include <string>

namespace cmm {

/// Failure categories. The CLI maps these onto process exit codes.
enum class ErrorKind {
  invalid_parameter,
  out_of_support,
  config,
  data,
  convergence,
  numerical,
  internal,
};

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

}  // namespace cmm
