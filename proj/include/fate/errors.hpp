#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fate {

/// Base of every error the library raises. `kind()` is a stable
/// identifier ("TruncatedData", "ShapeMismatch", ...) that callers and the
/// CLI match on; `what()` is "<kind>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& detail)
      : std::runtime_error(kind + ": " + detail), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Error families. The concrete kind string carries the specific condition.
class ParseError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A CSV cell that does not parse as a number. Row and column are 1-based;
/// row 1 is the first data row after the header.
class CellError : public DataError {
 public:
  CellError(std::string kind, long row, long col, const std::string& detail)
      : DataError(std::move(kind), "row " + std::to_string(row) + ", column " +
                                       std::to_string(col) + ": " + detail),
        row_(row),
        col_(col) {}

  long row() const noexcept { return row_; }
  long col() const noexcept { return col_; }

 private:
  long row_;
  long col_;
};

}  // namespace fate
