#pragma once

#include <stdexcept>
#include <string>

namespace snell {

/// Failure categories surfaced by the solvers and the CLI.
enum class ErrorKind {
    dimension,
    precondition,
    range,
    spec,
    grid,
    capacity,
    divergence,
    partition,
    config,
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::range: return "range";
    case ErrorKind::spec: return "spec";
    case ErrorKind::grid: return "grid";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::partition: return "partition";
    case ErrorKind::config: return "config";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + what)
        , kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
    throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const char* what) {
    if (!condition) fail(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
    if (!condition) fail(kind, what);
}

}  // namespace snell
