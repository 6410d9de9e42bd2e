#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace interpeq {

// Deterministic seeded RNG used everywhere randomness is needed. All streams
// derive from one 64-bit seed via splitmix64 so results are reproducible and
// independent of std library implementation details. Stream splitting:
// Rng(seed).split(stage_id).split(round_id) ...
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    // Derives an independent child stream keyed by `key`.
    Rng split(std::uint64_t key) const {
        Rng child(0);
        child.state_ = splitmix(state_ ^ splitmix(key + 0x517cc1b727220a95ull));
        return child;
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return splitmix(state_);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) {
        // Modulo bias is negligible for the n used here (n << 2^64).
        return n == 0 ? 0 : next_u64() % n;
    }

    // Standard normal via Box-Muller; deterministic across platforms.
    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    std::vector<double> gaussian_vector(std::size_t n, double scale) {
        std::vector<double> out(n);
        for (auto& x : out) x = scale * next_gaussian();
        return out;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ull;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    std::uint64_t state_ = 0;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace interpeq
