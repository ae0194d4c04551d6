#pragma once

#include <stdexcept>
#include <string>
#include <vector>
#include <sstream>

namespace mvpt {

/// Base of every error raised by the library. The CLI maps subclasses onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct DomainError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct FusionError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct AuditError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };
struct DecodeError : Error { using Error::Error; };
struct SplitError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };

struct LoadError : Error {
    enum class Kind { header, truncated, checksum, mismatch, io };
    Kind kind;
    LoadError(Kind k, const std::string& msg) : Error(msg), kind(k) {}
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

}  // namespace mvpt
