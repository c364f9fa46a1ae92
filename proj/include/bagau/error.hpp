#pragma once

#include <stdexcept>
#include <string>

namespace bagau {

/// Invalid configuration or arguments. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unreadable, malformed or inconsistent data on disk. CLI exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss or parameters during training. CLI exit code 4.
class NumericalAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace bagau
