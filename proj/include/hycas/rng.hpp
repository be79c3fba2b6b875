#pragma once

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>

namespace hycas {

/// SplitMix64 step; advances `state` and returns the next output word.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent child seed from (seed, index). This is the basis of
/// every counter-based noise stream: sample i of a job uses
/// derive_seed(job_seed, i), so parallel and serial execution agree.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t s = seed ^ (index + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    std::uint64_t a = splitmix64(s);
    std::uint64_t b = splitmix64(s);
    return a ^ (b >> 1);
}

namespace detail {

// Ziggurat tables for the standard normal, 256 layers. The split point r is
// solved at startup so the equal-area recurrence closes exactly at f(0)=1;
// no magic table constants are trusted.
struct ZigguratTables {
    static constexpr int kLayers = 256;
    std::array<double, kLayers + 1> x{};  // x[0] = virtual base width, x[1] = r
    std::array<double, kLayers> y{};      // y[i] = top of strip i

    static double density(double v) { return std::exp(-0.5 * v * v); }
    static double tail_area(double r) {
        return std::sqrt(std::acos(-1.0) / 2.0) * std::erfc(r / std::sqrt(2.0));
    }

    // Runs the equal-area recurrence for a candidate r and reports the
    // closing gap y_{N-1} - 1 (positive means the strips overshoot the mode).
    double build(double r) {
        const double v = r * density(r) + tail_area(r);
        x[1] = r;
        y[0] = density(r);
        x[0] = v / y[0];
        for (int i = 2; i <= kLayers; ++i) {
            double top = y[i - 2] + v / x[i - 1];
            y[i - 1] = top;
            x[i] = top >= 1.0 ? 0.0 : std::sqrt(-2.0 * std::log(top));
        }
        return y[kLayers - 1] - 1.0;
    }

    ZigguratTables() {
        double lo = 3.0, hi = 4.0;
        for (int it = 0; it < 200; ++it) {
            double mid = 0.5 * (lo + hi);
            (build(mid) > 0.0 ? lo : hi) = mid;
        }
        build(lo);
        assert(std::fabs(y[kLayers - 1] - 1.0) < 1e-9);
        y[kLayers - 1] = 1.0;
    }
};

inline const ZigguratTables& ziggurat() {
    static const ZigguratTables tables;
    return tables;
}

}  // namespace detail

/// xoshiro256** generator with ziggurat Gaussian sampling. Deterministic for
/// a given seed on every platform; all randomness in the project flows
/// through this class.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in (lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        assert(n > 0);
        std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal draw (ziggurat with exact wedge/tail handling).
    double normal() {
        const auto& t = detail::ziggurat();
        for (;;) {
            const std::uint64_t bits = next_u64();
            const int layer = static_cast<int>(bits & 0xff);
            const double u = 2.0 * uniform() - 1.0;
            const double x = u * t.x[layer];
            if (std::fabs(x) < t.x[layer + 1]) return x;
            if (layer == 0) return tail(u > 0.0);
            const double y0 = t.y[layer - 1];
            const double y1 = t.y[layer];
            if (y0 + uniform() * (y1 - y0) < detail::ZigguratTables::density(x)) return x;
        }
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    double tail(bool positive) {
        const double r = detail::ziggurat().x[1];
        double xx, yy;
        do {
            xx = -std::log(1.0 - uniform()) / r;
            yy = -std::log(1.0 - uniform());
        } while (yy + yy < xx * xx);
        return positive ? r + xx : -(r + xx);
    }

    std::array<std::uint64_t, 4> state_;
};

}  // namespace hycas
