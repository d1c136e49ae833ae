#pragma once

#include <stdexcept>
#include <string>

namespace mframe {

enum class ErrorKind {
    InputContract,
    Capability,
    UnsupportedLevel,
    Divergence,
    NonContraction,
    FlowDomain,
};

const char* to_string(ErrorKind kind) noexcept;

/// Single exception type for every library failure; `kind()` is what
/// callers dispatch on, `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

inline void require(bool condition, const std::string& message) {
    if (!condition) fail(ErrorKind::InputContract, message);
}

} // namespace mframe
