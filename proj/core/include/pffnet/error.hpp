#pragma once

#include <stdexcept>
#include <string>

namespace pffnet {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor or image dimensions that violate an operation's contract.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Out-of-range configuration or parameter values.
class ConfigError : public Error {
public:
    using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& reason)
        : Error(path + ": " + reason), path_(path), reason_(reason) {}

    const std::string& path() const noexcept { return path_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string path_;
    std::string reason_;
};

// File was readable but its content is malformed (bad magic, truncated, wrong version...).
class FormatError : public IoError {
public:
    using IoError::IoError;
};

// NaN or Inf where finite values are required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace pffnet
