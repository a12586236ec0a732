#pragma once

#include <stdexcept>
#include <string>

namespace mzgle {

/// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind { validation, numeric, resource };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& what) : Error(ErrorKind::validation, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

/// Raised when a configurable budget (term count, iteration cap) is exhausted.
struct ResourceError : Error {
  ResourceError(const std::string& what, long reached = -1)
      : Error(ErrorKind::resource, what), reached_(reached) {}
  long reached() const noexcept { return reached_; }

 private:
  long reached_;
};

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return 2;
    case ErrorKind::numeric: return 3;
    case ErrorKind::resource: return 4;
  }
  return 1;
}

}  // namespace mzgle
