// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace di2 {

// Contract / configuration failures map to exit code 1 in the CLI; anything
// else escaping a command is treated as internal (exit code 2).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ContractError : public Error {
public:
    using Error::Error;
};

class StagingError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

// Raised by training loops on a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

// Unrecoverable internal condition (e.g. exhausted rejection sampling).
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace di2
