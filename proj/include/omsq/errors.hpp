#pragma once

#include <stdexcept>
#include <string>

namespace omsq {

// Invalid or inconsistent configuration / parameters.  CLI exit code 2.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure: divergence, singularity, domain violation.  CLI exit code 3.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File / format failure: missing path, malformed content.  CLI exit code 4.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const config_error*>(&e)) return 2;
    if (dynamic_cast<const numeric_error*>(&e)) return 3;
    if (dynamic_cast<const io_error*>(&e)) return 4;
    return 3;
}

} // namespace omsq
