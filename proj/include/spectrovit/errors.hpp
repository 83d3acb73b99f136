#pragma once

#include <stdexcept>
#include <string>

namespace spectrovit {

// Failure classes; the CLI maps them onto exit codes 2/3/4.
enum class ErrorKind {
  Usage,      // bad arguments or configuration
  Data,       // malformed, missing or inconsistent input data (incl. I/O)
  Numerical,  // divergence, non-convergence, degenerate numerics
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return 2;
    case ErrorKind::Data: return 3;
    case ErrorKind::Numerical: return 4;
  }
  return 1;
}

}  // namespace spectrovit
