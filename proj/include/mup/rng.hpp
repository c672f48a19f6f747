#pragma once
// Splittable counter-based RNG. A stream is (key, gamma): draw i is
// mix64(key + (i+1)*gamma) with gamma odd and per-stream, so distinct streams
// are distinct Weyl sequences rather than offsets of a shared one. Keys chain
// through mix64 over (master_seed, purpose, replicate, axis).
//
// Gaussians come from the Marsaglia polar transform with a cached spare.
// Stream consumption order (including rejection retries) is part of the
// determinism contract: the same stream always yields the same sequence.

#include <bit>
#include <cmath>
#include <cstdint>

namespace mup {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

inline std::uint64_t mix64(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

// Purpose tags keep weight and batch streams disjoint by construction.
enum class Purpose : std::uint64_t {
    Weights = 0x5745u,
    Batch = 0x4241u,
    Generic = 0x4745u,
};

class Stream {
  public:
    Stream(std::uint64_t key, std::uint64_t gamma_src) : key_(key) {
        gamma_ = mix64(gamma_src) | 1ull;
        // Weak gammas (few bit transitions) weaken the Weyl/mix pairing.
        if (std::popcount(gamma_ ^ (gamma_ >> 1)) < 24) gamma_ ^= 0xaaaaaaaaaaaaaaaaull;
    }

    std::uint64_t next_u64() { return mix64(key_ + (++ctr_) * gamma_); }

    std::uint64_t draws() const { return ctr_; }

    // Uniform on [0,1) with 53 random bits.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * next_unit() - 1.0;
            v = 2.0 * next_unit() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

  private:
    std::uint64_t key_;
    std::uint64_t gamma_;
    std::uint64_t ctr_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

inline Stream derive_stream(std::uint64_t master_seed, Purpose purpose,
                            std::uint64_t replicate = 0, std::uint64_t axis = 0) {
    std::uint64_t k = mix64(master_seed + kGolden * static_cast<std::uint64_t>(purpose));
    k = mix64(k + kGolden * replicate);
    k = mix64(k + kGolden * axis);
    return Stream(k, k + kGolden);
}

}  // namespace mup
