#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace reassemble {

/// Base class for all library errors. Concrete error types live in the
/// module that raises them.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Angle folded into [0, 360).
inline double wrap_angle_deg(double deg) {
    double a = std::fmod(deg, 360.0);
    if (a < 0.0) a += 360.0;
    return a;
}

/// Deterministic RNG wrapper. Substreams are derived from a root seed plus a
/// stream index so parallel producers (one per puzzle, per piece, ...) never
/// share state.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    static Rng substream(uint64_t root_seed, uint64_t stream_index) {
        std::seed_seq seq{uint32_t(root_seed), uint32_t(root_seed >> 32), uint32_t(stream_index),
                          uint32_t(stream_index >> 32), 0x9e3779b9u};
        std::mt19937_64 eng(seq);
        Rng r(0);
        r.engine_ = eng;
        return r;
    }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    bool bernoulli(double p) {
        return std::bernoulli_distribution(p)(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace reassemble
