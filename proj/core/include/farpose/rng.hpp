#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "farpose/common.hpp"

namespace farpose {

/// Seeded RNG with platform-independent draws (the standard distributions are
/// implementation-defined, so sampling is done from raw 64-bit words).
class Rng {
  public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t raw() { return gen_(); }

    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    /// Geometric number of frames with the given mean (>= 1).
    int geometric(double mean) {
        double p = 1.0 / std::max(1.0, mean);
        int k = 1;
        while (uniform() > p && k < 100000) ++k;
        return k;
    }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0;
};

}  // namespace farpose
