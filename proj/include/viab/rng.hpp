#pragma once

#include <cmath>
#include <cstdint>

namespace viab {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// xoshiro256** stream keyed by (seed, stream index).  Integer-only state
// transitions, so draws are bit-identical across platforms and independent of
// how paths are distributed over worker threads.
class PathRng {
  public:
    PathRng(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t sm = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
        for (auto& w : state_) w = detail::splitmix64(sm);
        have_spare_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = detail::rotl(state_[3], 45);
        return result;
    }

    // uniform on [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform on (0, 1]
    double uniform01_pos() { return 1.0 - uniform01(); }

    double exponential(double rate) { return -std::log(uniform01_pos()) / rate; }

    // Box-Muller, pair cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01_pos();
        const double u2 = uniform01();
        const double rad = std::sqrt(-2.0 * std::log(u1));
        const double ang = 6.283185307179586476925286766559 * u2;
        spare_ = rad * std::sin(ang);
        have_spare_ = true;
        return rad * std::cos(ang);
    }

  private:
    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool have_spare_;
};

}  // namespace viab
