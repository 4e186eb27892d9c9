#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dora {

// Bad input data: malformed files, schema mismatches, missing labels.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A CSV row that could not be parsed. `row` is 1-based over data rows
// (the header is row 0).
class ParseError : public DataError {
 public:
  ParseError(std::size_t row, const std::string& what)
      : DataError("row " + std::to_string(row) + ": " + what), row_(row) {}

  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Non-finite losses or gradients during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dora
