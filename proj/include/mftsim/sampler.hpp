#pragma once

#include <vector>

#include "mftsim/dataset.hpp"
#include "mftsim/rng.hpp"

namespace mft {

/// k distinct indices from [0, n) via partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           Rng& rng) {
    require(k <= n, "sample_without_replacement: k exceeds population");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + rng.uniform_index(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    return idx;
}

inline std::vector<Example> sample_batch(const std::vector<Example>& split, std::size_t k,
                                         Rng& rng) {
    auto idx = sample_without_replacement(split.size(), std::min(k, split.size()), rng);
    std::vector<Example> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(split[i]);
    return out;
}

} // namespace mft
