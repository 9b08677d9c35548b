// Copyright 2026 The Aquila-Lite Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace aquila {

enum class ErrorKind {
    Shape,
    Numeric,
    Config,
    State,
    Capacity,
    Format,
    Usage,
};

/// Base for every error raised by the library. The kind selects the CLI exit code.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error(ErrorKind::Shape, "shape error: " + what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, "numeric error: " + what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, "configuration error: " + what) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error(ErrorKind::State, "state error: " + what) {}
};

class CapacityError : public Error {
public:
    explicit CapacityError(const std::string& what) : Error(ErrorKind::Capacity, "capacity error: " + what) {}
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(ErrorKind::Usage, "usage error: " + what) {}
};

enum class FormatCode {
    Io = 1,
    BadMagic,
    BadVersion,
    Truncated,
    CrcMismatch,
    BadDtype,
    Malformed,
};

class FormatError : public Error {
public:
    FormatError(FormatCode code, const std::string& what)
        : Error(ErrorKind::Format, "format error: " + what), code_(code) {}
    FormatCode code() const noexcept { return code_; }

private:
    FormatCode code_;
};

/// Process exit status for each error kind: 1 usage, 2 format, 3 numeric.
inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Format:
        return 2;
    case ErrorKind::Numeric:
        return 3;
    default:
        return 1;
    }
}

}  // namespace aquila
