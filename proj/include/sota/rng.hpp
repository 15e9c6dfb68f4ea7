#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace sota {

// splitmix64 finalizer. Stable across platforms; used to derive independent
// stream seeds from a master seed plus structural tags, so that every
// consumer of randomness (pool entry, rollout, eval draw, ...) owns its own
// stream and results do not depend on scheduling or worker count.
uint64_t mix64(uint64_t x);
uint64_t derive_seed(uint64_t master, uint64_t stream_tag, uint64_t index = 0);

// mt19937_64 stream with helpers. Gaussians use Box-Muller without a cached
// spare, so the serialized state is exactly the engine state.
class RngStream {
  public:
    explicit RngStream(uint64_t seed) : eng_(seed) {}

    // uniform in [0, 1) with 53 random bits; engine-portable construction
    double uniform() {
        return double(eng_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double gaussian() {
        // u1 in (0, 1] so the log is finite
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // integer in [0, n) via 128-bit multiply-shift
    uint64_t integer(uint64_t n) {
        return uint64_t((static_cast<unsigned __int128>(eng_()) * n) >> 64);
    }

    std::string serialize() const;
    static RngStream deserialize(const std::string& s);

  private:
    std::mt19937_64 eng_;
};

}  // namespace sota
