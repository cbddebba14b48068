#pragma once

#include <stdexcept>
#include <string>

namespace qfs {

// Base class for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Input file cannot be read or is not valid UTF-8.
class IoError : public Error {
public:
    using Error::Error;
};

class EncodingError : public Error {
public:
    using Error::Error;
};

// Structured model output violates the expected schema. The message is a
// human-readable reason suitable for inclusion in a corrective re-prompt.
class ParseError : public Error {
public:
    using Error::Error;
};

// A validation pass left some (node, dimension) pair uncovered or covered twice.
class CoverageError : public Error {
public:
    using Error::Error;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Request would exceed the model's context window; raised before any call.
class OverflowError : public Error {
public:
    using Error::Error;
};

// Transport-level failure worth retrying (rate limit, 5xx, connection reset).
class TransientError : public Error {
public:
    using Error::Error;
};

// Transport-level failure that will not improve on retry.
class PermanentError : public Error {
public:
    using Error::Error;
};

// Retries exhausted at the transport level.
class TransportError : public Error {
public:
    using Error::Error;
};

// Schema re-prompts exhausted; carries the last raw model output.
class StructuredOutputError : public Error {
public:
    StructuredOutputError(const std::string& what, std::string last_raw)
        : Error(what), last_raw_(std::move(last_raw)) {}
    const std::string& last_raw() const { return last_raw_; }

private:
    std::string last_raw_;
};

class StoreError : public Error {
public:
    using Error::Error;
};

// A stage item failed after all recovery options; recorded, not fatal.
class StageError : public Error {
public:
    using Error::Error;
};

} // namespace qfs
