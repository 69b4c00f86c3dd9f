#pragma once

#include <cmath>
#include <cstdint>

namespace fdis {

// SplitMix64. The whole project draws randomness through this one generator
// so runs are reproducible from a single u64 seed.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() { return splitmix64_next(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform_co() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe as the Box-Muller log argument.
    double uniform_oc() { return 1.0 - uniform_co(); }

    // Box-Muller. The sine partner is cached, so draws 2k and 2k+1 consume
    // exactly two uniforms between them.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_oc();
        const double u2 = uniform_co();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace fdis
