#pragma once

#include <stdexcept>
#include <string>

namespace conda {

// Bad configuration, CLI usage, or contract violation. CLI exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed or missing input data. CLI exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or numeric breakdown during compute. CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes; names the op and both shapes in the message.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace conda
