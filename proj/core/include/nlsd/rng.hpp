#pragma once

#include <cstdint>
#include <vector>

namespace nlsd {

/// Counter-based SplitMix64 stream.
///
/// The i-th draw (i = 1, 2, ...) is `mix64(seed + i * 0x9E3779B97F4A7C15)`
/// with the SplitMix64 finalizer
///
///     z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///     z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///     z =  z ^ (z >> 31)
///
/// so any draw can be reproduced from (seed, counter) alone, in any language.
/// Derived quantities:
///   - uniform():   (next() >> 11) * 2^-53, in [0, 1)
///   - below(n):    draws x until x >= (2^64 - n) mod n, returns x mod n
///   - normal():    Box-Muller, u1 = 1 - uniform(), u2 = uniform(),
///                  returns sqrt(-2 ln u1) * cos(2 pi u2); the sine half is discarded
///   - split(k):    independent child stream seeded with mix64(seed ^ mix64(k + 1))
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

    static std::uint64_t mix64(std::uint64_t z) noexcept;

    std::uint64_t next() noexcept;
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    std::uint64_t below(std::uint64_t n) noexcept;
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
    bool bernoulli(double p) noexcept { return uniform() < p; }

    Rng split(std::uint64_t stream) const noexcept;

    template <class T>
    void shuffle(std::vector<T>& values) noexcept {
        for (std::size_t i = values.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t counter() const noexcept { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace nlsd
