#pragma once

#include <cstdint>
#include <cmath>
#include <random>
#include <string_view>

namespace stcn {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent, reproducible stream for (seed, stream) pairs.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(splitmix64(seed)),
                      static_cast<std::uint32_t>(splitmix64(seed) >> 32),
                      static_cast<std::uint32_t>(splitmix64(stream ^ 0x5bd1e995ULL)),
                      static_cast<std::uint32_t>(splitmix64(stream ^ 0x5bd1e995ULL) >> 32)};
    return std::mt19937_64(seq);
}

// Standard normal via Box-Muller so draws do not depend on the library's
// normal_distribution caching behaviour.
class NormalSource {
public:
    explicit NormalSource(std::mt19937_64 engine) : engine_(std::move(engine)) {}

    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        constexpr double two_pi = 6.283185307179586476925286766559;
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(two_pi * u2);
        has_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace stcn
