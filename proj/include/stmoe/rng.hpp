#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace stmoe {

/// Unbiased draw from [0, m) by rejection sampling. std::uniform_int_distribution
/// is implementation-defined, which would break byte-identical artifacts across
/// standard libraries; this is pinned.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t m) {
    const std::uint64_t threshold = (0 - m) % m;
    for (;;) {
        const std::uint64_t r = rng();
        if (r >= threshold) return r % m;
    }
}

/// Canonical double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates; same cross-library rationale as bounded().
template <typename T>
void shuffle_vec(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[bounded(rng, i)]);
    }
}

/// k distinct indices from [0, n), returned ascending.
inline std::vector<int> sample_indices(int n, int k, std::mt19937_64& rng) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k; ++i) {
        const int j = i + static_cast<int>(bounded(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace stmoe
