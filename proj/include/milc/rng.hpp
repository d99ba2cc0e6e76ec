#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace milc {

// splitmix64 finalizer; stretches seeds and combines stream salts.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic random stream with derivable child streams.
///
/// derive() depends only on the stream's seed path, never on how many values
/// have been drawn, so pre-split sub-streams give schedule-independent results
/// when consumers run in parallel. All draws go through explicit conversions
/// (no std distributions) so sequences are stable across platforms.
class RngStream {
public:
    explicit RngStream(uint64_t seed) : base_(seed), gen_(mix64(seed)) {}

    RngStream derive(uint64_t salt) const {
        return RngStream(mix64(base_ ^ mix64(salt + 0x632be59bd9b4e019ULL)));
    }

    template <class... Rest>
    RngStream derive(uint64_t first, uint64_t second, Rest... rest) const {
        return derive(first).derive(second, rest...);
    }

    uint64_t seed() const { return base_; }

    uint64_t next_u64() { return gen_(); }

    // uniform in [0,1), 53-bit resolution
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller, two uniforms per draw, nothing cached
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(1.0 - u1));
        return r * std::cos(6.283185307179586476925287 * u2);
    }

    // uniform integer in [0, n); modulo bias is irrelevant at our n
    size_t index(size_t n) { return size_t(gen_() % uint64_t(n)); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0,n), ascending
    std::vector<size_t> sample_indices(size_t n, size_t k);

private:
    uint64_t base_;
    std::mt19937_64 gen_;
};

inline std::vector<size_t> RngStream::sample_indices(size_t n, size_t k) {
    if (k > n) k = n;
    std::vector<size_t> pool(n);
    for (size_t i = 0; i < n; ++i) pool[i] = i;
    // partial Fisher-Yates: first k slots end up a uniform sample
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + index(n - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

// multiplicative-inverse dropout mask: 0 with probability p, else 1/(1-p)
inline void fill_dropout_mask(std::vector<double>& mask, double p, RngStream& rng) {
    const double scale = 1.0 / (1.0 - p);
    for (auto& m : mask) m = (rng.uniform() < p) ? 0.0 : scale;
}

}  // namespace milc
