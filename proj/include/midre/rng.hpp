#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace midre {

// FNV-1a 64-bit. Stable across platforms; used for token ids, cache keys and
// content checksums.
inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// splitmix64 finalizer; mixes two words into one well-spread word.
inline uint64_t mix64(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// value-producing helpers below avoid std distributions, whose outputs are
// not pinned across library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // [0, 1) with 53 random mantissa bits.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    size_t index(size_t n) { return static_cast<size_t>(eng_() % n); }

    bool coin() { return (eng_() & 1u) != 0; }

    // Fisher-Yates with our own index draws (std::shuffle is unspecified).
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[index(v.size())];
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace midre
