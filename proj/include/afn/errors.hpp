#pragma once

#include <stdexcept>
#include <string>

namespace afn {

// Error taxonomy shared across modules. The CLI maps these onto exit codes:
// ConfigError (and misuse errors) -> 1, DataError/FormatError -> 2,
// NumericError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad hyperparameter, missing required field,
// unknown config key, dimension chain violation at construction.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data: CSV parse failures, out-of-range
// labels, empty datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint or artifact file that cannot be decoded: version mismatch,
// truncation, shape mismatch against the declared architecture.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Numerical abort: NaN/Inf loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Tensor shape disagreement at op application time.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Elementwise op applied outside its mathematical domain (log of a
// nonpositive value, sqrt of a negative value).
class DomainError : public Error {
 public:
  using Error::Error;
};

// API protocol violation: backward called twice on one tape, non-scalar
// loss, optimizer step without populated gradients.
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace afn
