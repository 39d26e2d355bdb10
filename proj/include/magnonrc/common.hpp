#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace magnonrc {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kMu0 = 1.25663706212e-6;  // vacuum permeability, T*m/A
// Free-electron gyromagnetic ratio, rad s^-1 T^-1.
inline constexpr double kGamma = 1.760859e11;
inline constexpr double kDefaultDriveCap = 2.0;

/// Raised for invalid geometry, antenna/probe layout, or parameter values.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised for malformed or out-of-range input data.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when the integrator produces non-finite values.
struct NumericError : std::runtime_error {
    int cell;
    NumericError(const std::string& msg, int cell_index)
        : std::runtime_error(msg), cell(cell_index) {}
};

/// Raised when a drive multiplier exceeds the configured cap.
struct DriveSaturationError : std::runtime_error {
    explicit DriveSaturationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3() = default;
    Vec3(double xv, double yv, double zv) : x(xv), y(yv), z(zv) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        if (n == 0.0) throw ConfigError("cannot normalize zero vector");
        return {x / n, y / n, z / n};
    }
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline uint64_t hash_mix(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

inline uint64_t double_bits(double v) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    return bits;
}

/// Seeded random source with platform-independent draw semantics.
/// std::mt19937_64 output is pinned by the standard; the distributions here
/// are hand-rolled because the std ones are implementation-defined.
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; consumes exactly two draws.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    /// Unbiased integer in [0, bound) by rejection.
    uint64_t integer(uint64_t bound) {
        if (bound == 0) throw ConfigError("Rng::integer bound must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t v = gen_();
        while (v >= limit) v = gen_();
        return v % bound;
    }

    /// Fisher-Yates shuffle with the portable integer draw.
    template <typename T>
    void shuffle(std::vector<T>& values) {
        for (size_t i = values.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(integer(i));
            std::swap(values[i - 1], values[j]);
        }
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace magnonrc
