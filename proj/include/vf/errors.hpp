#pragma once

#include <stdexcept>
#include <string>

namespace vf {

// Base for everything thrown by the library. The CLI maps these to exit
// codes: ConfigError/usage -> 2, everything else -> 1.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes or axes.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid hyperparameter / config value (bad patch size, p >= 1, ...).
struct ConfigError : Error {
  using Error::Error;
};

// API contract violated (non-scalar loss, empty split, ...).
struct ContractError : Error {
  using Error::Error;
};

// Bad dataset content: missing clip, corrupt header, label outside {0,1}.
struct DataError : Error {
  using Error::Error;
};

// Filesystem-level failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace vf
