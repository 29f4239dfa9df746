#pragma once

#include <stdexcept>
#include <string>

namespace flearn {

// Base class for every error thrown by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid static configuration (bad dims, incompatible shapes, ...).
struct ConfigError : Error {
  using Error::Error;
};

// Bad runtime input (over-length sequence, empty batch, ...).
struct InputError : Error {
  using Error::Error;
};

// Malformed record stream; message names the offending line and field.
struct ParseError : Error {
  using Error::Error;
};

// Corrupt or unreadable checkpoint container; message carries the byte offset.
struct FormatError : Error {
  using Error::Error;
};

// Requested corpus size exceeds what the generator templates can produce.
struct CapacityError : Error {
  using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
  int epoch;
  int step;
  DivergenceError(const std::string& what, int epoch_, int step_)
      : Error(what + " (epoch " + std::to_string(epoch_) + ", step " +
              std::to_string(step_) + ")"),
        epoch(epoch_),
        step(step_) {}
};

}  // namespace flearn
