// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace wprocova {

/// Philox4x32-10 block function (Salmon et al.). Pure: the output depends only
/// on (counter, key).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
        const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
        const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
        const auto lo0 = static_cast<std::uint32_t>(p0);
        const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
        const auto lo1 = static_cast<std::uint32_t>(p1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kW0;
        key[1] += kW1;
    }
    return ctr;
}

/// Mixes a base seed with an index into a fresh 64-bit key (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Random stream addressed by (key, stream id, substream). Every draw is a
/// function of its address, so work can be split across threads in any way
/// without changing the numbers.
class CounterRng {
public:
    CounterRng(std::uint64_t key, std::uint32_t stream, std::uint64_t substream)
        : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
          stream_(stream),
          substream_(substream) {}

    std::uint64_t next_u64() {
        if (pos_ >= 4) refill();
        const std::uint64_t hi = buf_[pos_];
        const std::uint64_t lo = buf_[pos_ + 1];
        pos_ += 2;
        return (hi << 32) | lo;
    }

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal by the Box-Muller transform.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(angle);
        has_spare_ = true;
        return r * std::cos(angle);
    }

    /// Uniform integer in [0, bound) by rejection, bound > 0.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

private:
    void refill() {
        buf_ = philox4x32({block_, stream_, static_cast<std::uint32_t>(substream_),
                           static_cast<std::uint32_t>(substream_ >> 32)},
                          key_);
        ++block_;
        pos_ = 0;
    }

    std::array<std::uint32_t, 2> key_;
    std::uint32_t stream_;
    std::uint64_t substream_;
    std::uint32_t block_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    unsigned pos_ = 4;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Exactly n_treated ones among n labels, uniformly over such assignments.
inline std::vector<int> balanced_assignment(std::size_t n, std::size_t n_treated, CounterRng& rng) {
    std::vector<int> w(n, 0);
    for (std::size_t i = 0; i < n_treated && i < n; ++i) w[i] = 1;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(w[i - 1], w[j]);
    }
    return w;
}

}  // namespace wprocova
