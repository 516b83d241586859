#pragma once

#include <stdexcept>
#include <string>

namespace ssd {

/// Malformed input text (corpus columns, embedding rows, config lines).
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_ = 0;
};

/// A tag that is not O / B-X / I-X, or a label outside a fixed scheme.
class SchemeError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Checkpoint bytes are damaged: bad magic, truncation, checksum mismatch.
class IntegrityError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Checkpoint written by an incompatible format version.
class IncompatibleCheckpoint : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration: unknown keys, bad values, missing paths.
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// A synthetic benchmark specification that cannot generate data.
class SpecError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace ssd
