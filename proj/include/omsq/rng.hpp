#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "omsq/params.hpp"

namespace omsq {

// splitmix64 step; used both as a seed scrambler and for stream splitting.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Independent substream seed for (root seed, stage counter).  Stages of a run
// draw from disjoint streams so adding a stage never shifts another's samples.
inline uint64_t split_seed(uint64_t root, uint64_t stream) {
    uint64_t s = root ^ (0xa0761d6478bd642full * (stream + 1));
    uint64_t a = splitmix64(s);
    uint64_t b = splitmix64(s);
    return a ^ (b << 1);
}

// Deterministic normal generator: mt19937_64 + Box-Muller, independent of the
// standard library's unspecified std::normal_distribution algorithm.
class NormalRng {
  public:
    explicit NormalRng(uint64_t seed) : gen_(seed) {}

    double uniform() {
        // 53-bit mantissa uniform in (0, 1]
        return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = constants::two_pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace omsq
