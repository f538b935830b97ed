// dhvc/errors.hpp -- error hierarchy shared by all modules.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dhvc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable / ill-formed / non-finite input data.
struct InvalidInputError : Error {
  using Error::Error;
};

// Tensor / matrix dimension mismatch.
struct ShapeError : Error {
  using Error::Error;
};

// Argument outside its mathematical domain (t outside [0,1], ratio >= 1, ...).
struct DomainError : Error {
  using Error::Error;
};

// Bad configuration file or unknown key/flag.
struct ConfigError : Error {
  using Error::Error;
};

// Contour has no voiced frame where one is required.
struct NoVoicedFramesError : Error {
  using Error::Error;
};

// Model used before any training / checkpoint load.
struct UninitializedModelError : Error {
  using Error::Error;
};

// Non-finite value produced by a numeric operation.
struct NumericalError : Error {
  using Error::Error;
};

// Non-finite state during training or sampling; carries the step index.
struct DivergenceError : Error {
  DivergenceError(const std::string& msg, std::int64_t step_index)
      : Error(msg + " (step " + std::to_string(step_index) + ")"), step(step_index) {}
  std::int64_t step;
};

}  // namespace dhvc
