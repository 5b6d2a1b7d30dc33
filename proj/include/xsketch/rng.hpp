#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace xsketch {

// Deterministic seed derivation: every sampling site in the pipeline owns a
// seed derived from (master seed, tags...) so that reruns, checkpoint resumes
// and finite-difference sweeps see identical noise streams.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, uint64_t tag) { return mix64(seed ^ mix64(tag)); }

inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
    uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return derive_seed(seed, h);
}

template <typename... Rest>
uint64_t derive_seed(uint64_t seed, uint64_t tag, Rest... rest) {
    return derive_seed(derive_seed(seed, tag), rest...);
}

template <typename... Rest>
uint64_t derive_seed(uint64_t seed, std::string_view tag, Rest... rest) {
    return derive_seed(derive_seed(seed, tag), rest...);
}

// Self-contained splitmix64 + Box-Muller stream. Not std::normal_distribution:
// its algorithm is implementation-defined and we promise bit-stable streams.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : state_(mix64(seed ^ 0xd1b54a32d192ed03ULL)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Standard normal with |value| <= threshold: resample up to max_retries,
    // then clamp. threshold <= 0 means no truncation.
    double truncated_normal(double threshold, int max_retries = 100) {
        double e = normal();
        if (threshold <= 0.0) return e;
        for (int i = 0; i < max_retries && std::abs(e) > threshold; ++i) e = normal();
        if (e > threshold) e = threshold;
        if (e < -threshold) e = -threshold;
        return e;
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace xsketch
