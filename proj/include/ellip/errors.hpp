#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ellip {

/// Operand shapes do not conform.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A scalar parameter is outside its admissible range (delta <= 0, empty dataset, ...).
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A user-supplied function produced a non-finite value.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed model input, e.g. a token id outside the vocabulary.
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Training diverged.
struct TrainingError : std::runtime_error {
  TrainingError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step(step) {}
  std::size_t step;
};

/// Invalid configuration or command line. `key` names the offending entry when there is one.
struct UsageError : std::invalid_argument {
  UsageError(const std::string& what, std::string key = {})
      : std::invalid_argument(what), key(std::move(key)) {}
  std::string key;
};

struct FileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ellip
