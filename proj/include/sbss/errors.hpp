#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sbss {

// Base of every error raised by the library. Subclasses exist so callers
// (and tests) can branch on the failure kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SBSS_DEFINE_ERROR(Name)        \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

SBSS_DEFINE_ERROR(GridError);
SBSS_DEFINE_ERROR(IoError);
SBSS_DEFINE_ERROR(DomainError);
SBSS_DEFINE_ERROR(RangeError);
SBSS_DEFINE_ERROR(KernelError);
SBSS_DEFINE_ERROR(SizeError);
SBSS_DEFINE_ERROR(EnvelopeError);
SBSS_DEFINE_ERROR(NoImfError);
SBSS_DEFINE_ERROR(DegenerateInputError);
SBSS_DEFINE_ERROR(ParamError);
SBSS_DEFINE_ERROR(RankError);
SBSS_DEFINE_ERROR(DegenerateError);
SBSS_DEFINE_ERROR(PreconditionError);
SBSS_DEFINE_ERROR(SymmetryError);
SBSS_DEFINE_ERROR(ConfigError);

#undef SBSS_DEFINE_ERROR

// CSV/config parse failure. Row and column are 1-based; 0 means "not applicable".
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row = 0, std::size_t column = 0)
      : Error(decorate(what, row, column)), row_(row), column_(column) {}

  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  static std::string decorate(const std::string& what, std::size_t row, std::size_t column) {
    if (row == 0) return what;
    std::string out = what + " (row " + std::to_string(row);
    if (column != 0) out += ", column " + std::to_string(column);
    return out + ")";
  }

  std::size_t row_;
  std::size_t column_;
};

// Failure inside one pipeline stage; carries the stage tag.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace sbss
