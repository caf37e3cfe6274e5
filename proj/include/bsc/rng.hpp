#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace bsc {

// splitmix64 stream. Hand-rolled so that sequences are identical across
// platforms and standard-library versions; every consumer of randomness in
// the pipeline draws from one of these.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_unit()) * (hi - lo);
    }

    double uniform(double lo, double hi) { return lo + next_unit() * (hi - lo); }

    // Uniform in [0, n). n == 0 returns 0.
    uint64_t bounded(uint64_t n) {
        if (n == 0) return 0;
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        if (hi <= lo) return lo;
        return lo + static_cast<int>(bounded(static_cast<uint64_t>(hi - lo) + 1));
    }

    // Box-Muller; caches the second value.
    double normal(double sigma);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

uint64_t fnv1a64(std::string_view s);

// Named seed derivation: all randomness flows from one root seed, and each
// purpose gets its own stream so parallel execution order cannot change
// results.
uint64_t derive_seed(uint64_t root, std::string_view name);

}  // namespace bsc
