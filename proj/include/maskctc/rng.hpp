#pragma once

#include <cmath>
#include <cstdint>

namespace maskctc {

// Deterministic random source used everywhere sampling happens.
//
// Generator: SplitMix64 (Steele, Lea, Flood 2014). One 64-bit word of
// state, the standard gamma increment and two xor-multiply finalizer
// rounds.  The sequence depends only on the seed, never on platform,
// compiler or standard-library internals (std:: distributions are
// deliberately avoided; they are not pinned by the standard).
//
// Stream splitting: split(k) derives an independent child generator from
// the *current* state and the stream id k via
//   child_seed = finalize(state ^ (0xD1B54A32D192ED03 * (k + 1)))
// so sibling streams (k = 0, 1, 2, ...) are decorrelated and a given
// (seed, split path) always yields the same sequence.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], both inclusive. Unbiased (rejection).
    int uniform_int(int lo, int hi) {
        uint64_t n = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t threshold = (0 - n) % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return lo + static_cast<int>(r % n);
        }
    }

    // Standard normal via Box-Muller (one value per draw pair).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    Rng split(uint64_t stream) const {
        uint64_t s = state_ ^ (0xD1B54A32D192ED03ull * (stream + 1));
        s = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9ull;
        s ^= s >> 27;
        return Rng(s);
    }

private:
    uint64_t state_;
};

}  // namespace maskctc
