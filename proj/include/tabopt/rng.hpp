// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tabopt {

/// Counter-based pseudo-random generator with named, splittable streams.
///
/// Each stream is a (key, counter) pair; output i is a bijective mix of
/// key + i, so streams never share state and a stream can be re-created
/// from its seed path alone. All stochastic operations in the library
/// take an explicit Rng so runs replay bit-identically from one seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ kGolden)) {}

    /// Derive an independent child stream from a label.
    [[nodiscard]] Rng split(std::string_view name) const {
        return Rng(mix(key_ ^ fnv1a(name)), 0);
    }

    /// Derive an independent child stream from an index.
    [[nodiscard]] Rng split(std::uint64_t index) const {
        return Rng(mix(key_ ^ mix(index + 0x632be59bd9b4e019ULL)), 0);
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGolden); }

    /// Uniform draw in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Inclusive integer draw in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    /// Standard normal via Box-Muller; consumes two uniforms, keeps no cache.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    // splitmix64 finalizer
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace tabopt
