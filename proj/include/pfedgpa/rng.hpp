#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace pfedgpa {

/// A seeded random stream. Child streams are derived by mixing the parent
/// seed with a stream id, so a tree of streams is reproducible regardless of
/// the order in which children are consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }

    /// Independent child stream; does not advance this stream.
    Rng child(std::uint64_t stream_id) const { return Rng(mix(seed_ ^ mix(stream_id + 0x9e3779b97f4a7c15ULL))); }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    template <typename T>
    void fill_normal(std::span<T> out) {
        std::normal_distribution<double> dist(0.0, 1.0);
        for (auto& v : out) v = static_cast<T>(dist(engine_));
    }

    template <typename T>
    std::vector<T> normal_vector(std::size_t n) {
        std::vector<T> v(n);
        fill_normal<T>(v);
        return v;
    }

    template <typename It>
    void shuffle(It first, It last) {
        // Fisher-Yates with our own index draws; std::shuffle is implementation-defined
        for (auto n = last - first; n > 1; --n) {
            std::swap(first[n - 1], first[static_cast<std::ptrdiff_t>(index(static_cast<std::size_t>(n)))]);
        }
    }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace pfedgpa
