#pragma once

#include <cmath>
#include <cstdint>

namespace prcnn {

// Deterministic generator built on the SplitMix64 step function
// (Steele, Lea, Flood 2014). One 64-bit state word, one stream per seed.
// Identical seeds produce identical streams; normal deviates additionally
// depend on the platform's libm, so bitwise reproducibility of gaussian
// draws is guaranteed per binary.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Box-Muller. Consumes two words per draw; no cached second deviate, so
    // the stream position never depends on call history.
    double next_normal() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        // 1 - u1 keeps the log argument in (0, 1].
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t next_below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Independent sub-stream; used to derive per-purpose seeds from one
    // run seed (data order, init, test-set distortions, ...).
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        Rng r(seed ^ (0x6a09e667f3bcc909ull * (stream + 1)));
        return r.next_u64();
    }

private:
    std::uint64_t state_;
};

} // namespace prcnn
