#pragma once

#include <cstdint>
#include <random>

namespace sinkcache {

// All randomness in the project flows through this wrapper. mt19937_64 is
// fully specified by the standard, the uniform/gaussian transforms below are
// plain arithmetic, so streams are identical on every platform. (The library
// distributions are implementation-defined and must not be used.)
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Irwin-Hall sum of 12 uniforms: mean 0, variance 1, support [-6, 6].
    // Plenty for weight init and avoids libm-dependent transforms.
    double gaussian() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform();
        return s - 6.0;
    }

    // Unbiased integer in [0, n) via rejection.
    uint64_t uniform_int(uint64_t n) {
        const uint64_t bound = UINT64_MAX - UINT64_MAX % n;
        for (;;) {
            const uint64_t x = engine_();
            if (x < bound) return x % n;
        }
    }

  private:
    std::mt19937_64 engine_;
};

// Split a seed into independent named streams (init vs. data order etc.).
inline uint64_t seed_stream(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace sinkcache
