#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scrollnet {

/// Operand shapes do not conform.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad user-supplied data (labels out of range, empty batches, ...).
class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A caller broke an API precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid model or experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file. `offset()` is the byte offset of the failure.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

/// Training produced a non-finite loss. `dump()` holds a JSON diagnostic.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::string dump)
        : std::runtime_error(what), dump_(std::move(dump)) {}

    const std::string& dump() const noexcept { return dump_; }

private:
    std::string dump_;
};

}  // namespace scrollnet
