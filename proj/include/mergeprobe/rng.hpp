#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mergeprobe {

// Counter-based randomness: draw i of a stream is a pure function of
// (key, i), so results do not depend on evaluation order or parallel
// schedule. Streams are keyed by (seed, label, index), e.g. the DARE
// sparsifier keys on (seed, tensor name, model index).

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t derive_key(std::uint64_t seed, std::string_view label,
                                std::uint64_t index = 0) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ fnv1a64(label));
    h = mix64(h ^ index);
    return h;
}

inline std::uint64_t keyed_u64(std::uint64_t key, std::uint64_t counter) {
    return mix64(key + counter * 0x9E3779B97F4A7C15ull);
}

/// Uniform double in [0, 1) from the 53 high bits of the keyed draw.
inline double keyed_unit(std::uint64_t key, std::uint64_t counter) {
    return static_cast<double>(keyed_u64(key, counter) >> 11) * 0x1.0p-53;
}

/// Sequential convenience wrapper over the keyed generator. Deterministic
/// across platforms (no std:: distributions, whose output is
/// implementation-defined).
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : key_(key) {}

    std::uint64_t next_u64() { return keyed_u64(key_, counter_++); }

    double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = unit();
        double u2 = unit();
        // u1 == 0 would take log(0); nudge onto (0, 1].
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mergeprobe
