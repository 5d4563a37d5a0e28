#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kdream {

/// Error classes. The CLI maps each to a distinct exit code.
enum class ErrorKind {
  kInvalidArgument = 2,
  kParse = 3,
  kIo = 4,
  kFormat = 5,
  kDimensionMismatch = 6,
  kNumerical = 7,
  kExternal = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Text parse failure with a 1-based line number (0 when not line oriented).
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error(ErrorKind::kParse, line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::kDimensionMismatch, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::kNumerical, what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw Error(ErrorKind::kInvalidArgument, what);
}

}  // namespace kdream
