#pragma once

#include <cmath>
#include <cstdint>

namespace motionplan {

// Counter-based generator: every draw is a pure function of (seed, counter),
// so streams can be split per stage without touching each other.
struct RngState {
    uint64_t seed = 0;
    uint64_t counter = 0;

    explicit RngState(uint64_t seed_ = 0, uint64_t counter_ = 0)
        : seed(seed_), counter(counter_) {}

    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t next_u64() { return mix(seed ^ mix(counter++)); }

    // Derives an independent stream, e.g. one per pipeline stage.
    RngState split(uint64_t stream_id) const {
        return RngState(mix(seed ^ mix(stream_id ^ 0xa5a5a5a5a5a5a5a5ull)));
    }

    double uniform() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
};

}  // namespace motionplan
