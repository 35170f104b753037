#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xret {

// Base class for every error raised by the library. `kind()` is a short
// stable tag used by the CLI for machine-parsable error lines.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual const char* kind() const noexcept { return "error"; }
};

class InvalidArgument : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "invalid-argument"; }
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "dimension-mismatch"; }
};

class UnsupportedVariant : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "unsupported-variant"; }
};

// A scalar function produced NaN/Inf while probing coordinate `coordinate`.
class NonFiniteValue : public Error {
public:
    NonFiniteValue(const std::string& what, std::size_t coordinate)
        : Error(what), coordinate_(coordinate) {}
    const char* kind() const noexcept override { return "non-finite"; }
    std::size_t coordinate() const noexcept { return coordinate_; }

private:
    std::size_t coordinate_;
};

// Binary file decoding failure at a byte offset.
class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    const char* kind() const noexcept override { return "parse-error"; }
    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// Text file validation failure, with 1-based line and field numbers (0 = n/a).
class ManifestError : public Error {
public:
    ManifestError(const std::string& file, std::size_t line, std::size_t field, const std::string& msg)
        : Error(file + ":" + std::to_string(line) + (field ? ":" + std::to_string(field) : std::string{}) +
                ": " + msg),
          line_(line),
          field_(field) {}
    const char* kind() const noexcept override { return "manifest-error"; }
    std::size_t line() const noexcept { return line_; }
    std::size_t field() const noexcept { return field_; }

private:
    std::size_t line_;
    std::size_t field_;
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io-error"; }
};

class IncompatibleCheckpoint : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "incompatible-checkpoint"; }
};

class TrainingDiverged : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "training-diverged"; }
};

class FingerprintMismatch : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "fingerprint-mismatch"; }
};

}  // namespace xret
