#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace qinco {

inline constexpr const char* kLibraryVersion = "0.1.0";

using code_t = std::uint32_t;
using idx_t = std::int64_t;

/// Malformed input file or container.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values or a singular system.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define QINCO_CHECK(cond, msg)                                        \
    do {                                                              \
        if (!(cond)) {                                                \
            throw ::qinco::ConfigError(std::string(__func__) + ": " + \
                                       (msg));                        \
        }                                                             \
    } while (0)

} // namespace qinco
