#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace evgrid {

/// Invalid input or violated type invariant. The message names the offending field.
class ValidationError : public std::invalid_argument {
public:
    explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// An iterative solver failed to reach its tolerance within the iteration cap.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_(residual) {}

    double residual() const { return residual_; }

private:
    double residual_;
};

/// File system or serialization failure.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

/// Shortest decimal form that round-trips a double (locale independent).
/// 17 significant digits always round-trip, so the loop cannot fall through.
inline std::string format_double(double value) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, value);
        double back = 0.0;
        std::sscanf(buf, "%lg", &back);
        if (back == value) break;
    }
    return std::string(buf);
}

}  // namespace detail
}  // namespace evgrid
