#pragma once

#include <stdexcept>
#include <string>

namespace curesimex {

// Error taxonomy maps onto CLI exit codes: validation -> 2, numeric -> 3, io -> 4.
enum class ErrorKind { validation = 2, numeric = 3, io = 4 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(ErrorKind::validation, msg) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(ErrorKind::numeric, msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(ErrorKind::io, msg) {}
};

// The per-event-time transform recursion has no finite root: the remaining
// at-risk subjects cannot absorb the event mass at `time`.
struct TailDivergenceError : NumericError {
  TailDivergenceError(double time, const std::string& msg) : NumericError(msg), time(time) {}
  double time;
};

}  // namespace curesimex
