#pragma once

#include <stdexcept>
#include <string>

namespace linrel {

/// Caller broke a documented precondition (dimension mismatch, bad index, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed external input (unknown token, schema violation in a config).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Relation dataset problem, names the offending relation/field/sample.
struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Corrupt or incompatible serialized file (checkpoint, operator).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a failed numeric routine.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace linrel
