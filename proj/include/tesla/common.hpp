// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>

namespace tesla {

// ----------------------------- error types -----------------------------
//
// Contract violations (bad shapes, bad arguments) and data faults (corrupt
// files, non-finite values) are distinct so callers and fuzz tests can tell
// them apart.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct NumericFault : std::runtime_error {
    explicit NumericFault(const std::string& op) : std::runtime_error("numeric fault in " + op), op_name(op) {}
    std::string op_name;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct ScopeError : std::runtime_error {
    explicit ScopeError(const std::string& msg) : std::runtime_error("scope error: " + msg) {}
};

struct DegenerateSegment : std::runtime_error {
    explicit DegenerateSegment(const std::string& msg) : std::runtime_error("degenerate segment: " + msg) {}
};

struct DeterminismFault : std::runtime_error {
    explicit DeterminismFault(const std::string& msg) : std::runtime_error("determinism fault: " + msg) {}
};

// ----------------------------- rng -----------------------------
//
// SplitMix64 core. The standard library engines are portable but the
// distributions are not; everything here is hand-rolled so identical seeds
// give identical bits on every platform.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97f4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n); unbiased rejection sampling
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below(0)");
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // standard normal, Box-Muller with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    bool coin() { return (next_u64() >> 63) != 0; }

    template <class It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ----------------------------- hashing -----------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xCBF29CE484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

// Mix several values into one seed. Used everywhere a sub-seed is derived,
// e.g. hash(run seed, outer iteration, step index) so that loop 1 and loop 2
// replay identical augmentation draws.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    h = fnv1a64(&a, sizeof a, h);
    h = fnv1a64(&b, sizeof b, h);
    return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Worker cap for the embarrassingly parallel parts (teacher training, the
// five evaluation models). TESLA_THREADS overrides hardware concurrency.
inline std::size_t thread_cap() {
    if (const char* env = std::getenv("TESLA_THREADS")) {
        const long v = std::atol(env);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

}  // namespace tesla
