#pragma once

#include <array>
#include <bit>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace gmf {

// Counter-based random numbers (Philox 4x32-10). Every draw is a pure
// function of (key, counter), so streams can be replayed, split across
// threads, and coupled across runs without carrying generator state.

namespace detail {

inline constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::array<uint32_t, 4> philox4x32(uint64_t key, uint64_t counter_lo, uint64_t counter_hi = 0) {
    uint32_t c0 = static_cast<uint32_t>(counter_lo);
    uint32_t c1 = static_cast<uint32_t>(counter_lo >> 32);
    uint32_t c2 = static_cast<uint32_t>(counter_hi);
    uint32_t c3 = static_cast<uint32_t>(counter_hi >> 32);
    uint32_t k0 = static_cast<uint32_t>(key);
    uint32_t k1 = static_cast<uint32_t>(key >> 32);
    for (int round = 0; round < 10; ++round) {
        const uint64_t p0 = static_cast<uint64_t>(kPhiloxM0) * c0;
        const uint64_t p1 = static_cast<uint64_t>(kPhiloxM1) * c2;
        const uint32_t n0 = static_cast<uint32_t>(p1 >> 32) ^ c1 ^ k0;
        const uint32_t n1 = static_cast<uint32_t>(p1);
        const uint32_t n2 = static_cast<uint32_t>(p0 >> 32) ^ c3 ^ k1;
        const uint32_t n3 = static_cast<uint32_t>(p0);
        c0 = n0;
        c1 = n1;
        c2 = n2;
        c3 = n3;
        k0 += kPhiloxW0;
        k1 += kPhiloxW1;
    }
    return {c0, c1, c2, c3};
}

inline uint64_t mix64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// uniform in (0, 1] from 53 bits
inline double u01(uint32_t hi, uint32_t lo) {
    const uint64_t bits = ((static_cast<uint64_t>(hi) << 32) | lo) >> 11;
    return static_cast<double>(bits + 1) * 0x1.0p-53;
}

}  // namespace detail

/// Two independent standard normals from a single (key, counter) block.
inline void normal_pair(uint64_t key, uint64_t counter, double& z0, double& z1) {
    const auto b = detail::philox4x32(key, counter);
    const double u1 = detail::u01(b[0], b[1]);
    const double u2 = detail::u01(b[2], b[3]);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    z0 = r * std::cos(a);
    z1 = r * std::sin(a);
}

inline double normal_at(uint64_t key, uint64_t counter) {
    double z0, z1;
    normal_pair(key, counter, z0, z1);
    return z0;
}

/// uniform in [0,1)
inline double uniform_at(uint64_t key, uint64_t counter) {
    const auto b = detail::philox4x32(key, counter);
    const uint64_t bits = ((static_cast<uint64_t>(b[0]) << 32) | b[1]) >> 11;
    return static_cast<double>(bits) * 0x1.0p-53;
}

/// uniform integer in [0, n)
inline uint64_t uniform_index(uint64_t key, uint64_t counter, uint64_t n) {
    assert(n > 0);
    const auto b = detail::philox4x32(key, counter);
    const uint64_t bits = (static_cast<uint64_t>(b[0]) << 32) | b[1];
    return bits % n;
}

/// Distinct purposes draw from distinct key domains so counters never collide.
enum class StreamDomain : uint64_t {
    brownian = 1,
    exogenous = 2,
    initial = 3,
    probe = 4,
    subsample = 5,
    norm_restart = 6,
};

/// Stream identity for everything tied to a particle/node: the label enters
/// through its IEEE-754 bit pattern, so streams at mathematically equal
/// labels coincide across different particle counts (i/N keying), and the
/// path salt separates replications / per-node sample indices.
inline uint64_t stream_key(uint64_t seed, double label, uint64_t path_salt, StreamDomain domain) {
    uint64_t k = detail::mix64(seed + 0x632BE59BD9B4E019ull * static_cast<uint64_t>(domain));
    k = detail::mix64(k ^ std::bit_cast<uint64_t>(label));
    k = detail::mix64(k + path_salt);
    return k;
}

/// Keyed stream not tied to a label (selftests, subsampling, restarts).
inline uint64_t plain_key(uint64_t seed, uint64_t salt, StreamDomain domain) {
    return detail::mix64(detail::mix64(seed + 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(domain)) + salt);
}

/// Stateful convenience wrapper around a keyed counter stream.
class CounterStream {
public:
    explicit CounterStream(uint64_t key) : key_(key) {}
    double normal() { return normal_at(key_, counter_++); }
    double uniform() { return uniform_at(key_, counter_++); }
    uint64_t index(uint64_t n) { return uniform_index(key_, counter_++, n); }

private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

/// Brownian increments on a uniform grid over [0, T].
///
/// All increments are materialized at a base resolution k_base and coarser
/// resolutions are formed by exact partial sums, so a coarse increment equals
/// the sum of its fine sub-increments bit for bit. Streams are keyed by
/// (seed, label, path_salt); see stream_key.
class BrownianSource {
public:
    explicit BrownianSource(uint64_t seed) : seed_(seed) {}

    uint64_t seed() const { return seed_; }

    /// Fills out with k*n increments (step-major: out[m*n + d]), each
    /// N(0, (T/k) I_n) marginally. Requires k to divide k_base.
    void increments(double label, uint64_t path_salt, double horizon, int dim, int k, int k_base,
                    std::vector<double>& out) const {
        if (k < 1 || k_base < k || k_base % k != 0)
            throw std::invalid_argument("BrownianSource: k must divide k_base");
        if (dim < 1 || horizon <= 0.0) throw std::invalid_argument("BrownianSource: bad dim or horizon");
        const uint64_t key = stream_key(seed_, label, path_salt, StreamDomain::brownian);
        const int stride = k_base / k;
        const double base_sd = std::sqrt(horizon / static_cast<double>(k_base));
        out.assign(static_cast<size_t>(k) * dim, 0.0);
        for (int m = 0; m < k; ++m) {
            for (int d = 0; d < dim; ++d) {
                double s = 0.0;
                for (int f = 0; f < stride; ++f) {
                    const uint64_t base_step = static_cast<uint64_t>(m) * stride + f;
                    s += base_sd * normal_at(key, base_step * static_cast<uint64_t>(dim) + d);
                }
                out[static_cast<size_t>(m) * dim + d] = s;
            }
        }
    }

private:
    uint64_t seed_;
};

/// Exact Ornstein-Uhlenbeck transitions on a uniform grid:
/// d eta = -theta eta dt + sigma dW, started from the stationary law
/// (theta > 0) or from zero (theta == 0, plain Brownian motion).
struct OuSampler {
    double theta = 1.0;
    double sigma = 1.0;

    /// Fills out with (k+1)*n values at times m*T/k, out[m*n + d].
    void sample_grid(uint64_t key, double horizon, int k, int dim, std::vector<double>& out) const {
        const double dt = horizon / static_cast<double>(k);
        const double decay = std::exp(-theta * dt);
        const double step_sd =
            theta > 0.0 ? sigma * std::sqrt((1.0 - decay * decay) / (2.0 * theta)) : sigma * std::sqrt(dt);
        const double stat_sd = theta > 0.0 ? sigma / std::sqrt(2.0 * theta) : 0.0;
        out.assign(static_cast<size_t>(k + 1) * dim, 0.0);
        for (int d = 0; d < dim; ++d) out[d] = stat_sd * normal_at(key, d);
        for (int m = 1; m <= k; ++m)
            for (int d = 0; d < dim; ++d) {
                const double prev = out[static_cast<size_t>(m - 1) * dim + d];
                const double xi = normal_at(key, static_cast<uint64_t>(m) * dim + d);
                out[static_cast<size_t>(m) * dim + d] = prev * decay + step_sd * xi;
            }
    }
};

}  // namespace gmf
