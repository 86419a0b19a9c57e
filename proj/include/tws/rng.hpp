#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tws {

// Deterministic RNG wrapper. mt19937_64 has a standard-mandated sequence and
// the derived uniform/normal/shuffle transforms below are fully specified here,
// so identical seeds give identical streams across platforms and compilers.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the distribution exact.
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do { x = eng_(); } while (x >= limit);
        return x % n;
    }

    // Standard normal via Box-Muller (one value per call; the pair's second
    // half is cached).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(xs[i - 1], xs[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0;
    bool have_spare_ = false;
};

// FNV-1a over a label, folded with a base seed. Used to derive independent
// per-task / per-epoch streams from one global seed.
inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t index = 0) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&](uint64_t x) {
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    mix(base);
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    mix(index);
    return h;
}

}  // namespace tws
