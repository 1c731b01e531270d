// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tabopt {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or malformed input (bad meta, shape mismatch, unknown enum value).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be read, parsed, or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// A NaN or Inf surfaced where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace tabopt
