#include "bsc/rng.hpp"

#include <cmath>

namespace bsc {

double Rng::normal(double sigma) {
    if (have_cached_) {
        have_cached_ = false;
        return cached_ * sigma;
    }
    // Box-Muller on (0,1] so log() stays finite.
    double u1 = 1.0 - next_unit();
    double u2 = next_unit();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a) * sigma;
}

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t derive_seed(uint64_t root, std::string_view name) {
    Rng mix(root ^ fnv1a64(name));
    return mix.next_u64();
}

}  // namespace bsc
