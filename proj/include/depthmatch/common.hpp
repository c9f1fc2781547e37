#pragma once

#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dm {

// printf-style message formatting for exceptions and logs.
inline std::string strfmt(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[1024];
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

[[noreturn]] inline void fail(const std::string& msg) { throw std::runtime_error(msg); }

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Stable seed derivation for independent stochastic sites:
// seed = mix(global_seed, site_name, a, b). Reordering work across
// samples/epochs cannot perturb any other site's stream.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view site,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t s = global_seed ^ fnv1a(site);
    s ^= 0x2545f4914f6cdd1dull * (a + 1);
    std::uint64_t st = s + 0x632be59bd9b4e019ull * (b + 1);
    return splitmix64(st);
}

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// bit-identical across standard libraries and platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t st = seed;
        for (auto& si : s_) si = splitmix64(st);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0,1) with 53 random bits
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0,n) unbiased
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) fail("uniform_int: n must be positive");
        const std::uint64_t un = std::uint64_t(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return std::int64_t(x % un);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller with a cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // resample until |z| <= clip (in units of stddev)
    double truncated_normal(double stddev, double clip = 2.0) {
        double z = normal();
        while (std::fabs(z) > clip) z = normal();
        return z * stddev;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dm
