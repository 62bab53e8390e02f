#pragma once

// Counter-derived random streams. Every stream is keyed by the master seed and
// a path in the derivation tree  seed -> realization -> z-step -> purpose,
// so results never depend on scheduling or worker count.

#include <cstdint>
#include <initializer_list>
#include <random>

namespace speckle {

enum class Purpose : std::uint64_t {
    medium = 0x6d656469756dULL,
    restart = 0x72657374ULL,
    synthetic = 0x73796e74ULL,
    bootstrap = 0x626f6f74ULL,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Hashes a derivation path into a 64-bit stream key.
inline std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t k = splitmix64(seed);
    for (auto p : path) k = splitmix64(k ^ splitmix64(p + 0x632be59bd9b4e019ULL));
    return k;
}

class RngStream {
public:
    explicit RngStream(std::uint64_t key) : engine_(key) {}
    RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) : engine_(derive_key(seed, path)) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    std::uint64_t bits() { return engine_(); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Stream for the medium increment of one (realization, z-step).
inline RngStream medium_stream(std::uint64_t seed, std::uint64_t realization, std::uint64_t step) {
    return RngStream(seed, {realization, step, static_cast<std::uint64_t>(Purpose::medium)});
}

}  // namespace speckle
