#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tdpcr {

// Deterministic counter-style RNG. Every consumer derives a named substream
// from the run seed, so draws never depend on evaluation order elsewhere in
// the program. SplitMix64 core.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    Rng stream(std::string_view name) const {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return Rng(raw(), mix(state_ ^ h));
    }
    Rng stream(uint64_t idx) const { return Rng(raw(), mix(state_ ^ (idx * 0xff51afd7ed558ccdull + 1))); }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0,n)
    uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

    double normal() {
        // Box-Muller; draws exactly two uniforms per call.
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Marsaglia-Tsang, shape k >= 1. Used for SAR speckle (k = looks).
    double gamma(double k) {
        double d = k - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

private:
    Rng(uint64_t, uint64_t derived) : state_(derived) {}
    uint64_t raw() const { return 0; }

    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

}  // namespace tdpcr
