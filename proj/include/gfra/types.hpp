#pragma once

#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gfra {

using cplx = std::complex<double>;
using CVec = std::vector<cplx>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

// Error hierarchy. Everything derives from std::runtime_error so callers can
// catch broadly, but the CLI maps the concrete types onto exit codes.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
    ConfigError(std::string key, const std::string& what)
        : std::invalid_argument(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct ConsistencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IdentifiabilityError : std::runtime_error {
    IdentifiabilityError(int users, int antennas)
        : std::runtime_error("identifiability violated: K_hat_a=" + std::to_string(users) +
                             " exceeds A=" + std::to_string(antennas)),
          users_(users), antennas_(antennas) {}
    int users() const noexcept { return users_; }
    int antennas() const noexcept { return antennas_; }

private:
    int users_;
    int antennas_;
};

/// Complex matrix stored column-major; columns are the unit of access in the
/// receiver (one column per measurement vector or dictionary atom).
struct CMatrix {
    int rows = 0;
    int cols = 0;
    CVec data;

    CMatrix() = default;
    CMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c) {}

    cplx* col(int c) { return data.data() + static_cast<size_t>(c) * rows; }
    const cplx* col(int c) const { return data.data() + static_cast<size_t>(c) * rows; }
    cplx& operator()(int r, int c) { return data[static_cast<size_t>(c) * rows + r]; }
    const cplx& operator()(int r, int c) const { return data[static_cast<size_t>(c) * rows + r]; }
};

}  // namespace gfra
