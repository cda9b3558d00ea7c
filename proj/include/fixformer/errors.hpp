#pragma once

#include <stdexcept>
#include <string>

namespace fixformer {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition or API contract (bad argument, misuse).
struct ContractError : Error {
  using Error::Error;
};

// Shape/width mismatch between tensors. Message carries both shapes.
struct DimensionError : ContractError {
  using ContractError::ContractError;
};

// Problems with external data: files, datasets, malformed input.
struct DataError : Error {
  using Error::Error;
};

// Too little input to do anything (e.g. fewer than 2 valid gaze samples).
struct EmptyInputError : DataError {
  using DataError::DataError;
};

// Valid input produced no result; callers decide how to handle it.
struct EmptyResultError : DataError {
  using DataError::DataError;
};

// Numerical failure: non-finite values, diverged loss, failed gradient check.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace fixformer
