#pragma once

#include <stdexcept>
#include <string>

namespace msel {

// Shape mismatch between operands (rows/cols disagree with the op contract).
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an op (log of non-positive,
// batch norm on a single row, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// API misuse: non-scalar loss, empty mask, ragged aggregation input.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Unknown id handed to a tape or registry.
struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Bad run configuration (unknown key, invalid combination, out-of-range value).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dataset problems. ParseError for malformed content, IoError for the
// filesystem layer; both are DataError so callers can catch one family.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : DataError {
  using DataError::DataError;
};
struct IoError : DataError {
  using DataError::DataError;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace msel
