#pragma once

#include <qinco/data/vector_set.hpp>

#include <cstdint>
#include <vector>

namespace qinco {

/// Per-feature mean with a single pooled scale.
struct NormStats {
    std::vector<float> mean;
    float scale = 1.0F;

    std::size_t d() const { return mean.size(); }
    friend bool operator==(const NormStats&, const NormStats&) = default;
};

enum class NormDirection { forward, inverse };

inline constexpr float kMinNormScale = 1e-12F;

/// mean[j] is the feature average; scale is the standard deviation of all
/// centered entries pooled across features, clamped below by 1e-12.
NormStats fit_norm(const VectorSet& train);

/// forward: (x - mean) / scale, inverse: x * scale + mean.
VectorSet apply_norm(const VectorSet& x, const NormStats& s, NormDirection direction);

/// Gaussian mixture sample: `components` centers ~ N(0, I), then each point is
/// a uniformly chosen center plus spread * N(0, I). The random stream does not
/// depend on `spread`, so spread=0 yields each point's generating center.
VectorSet synth_gmm(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t components,
                    double spread);

struct SplitResult {
    std::vector<VectorSet> parts;
    std::vector<std::vector<std::size_t>> indices;
};

/// Disjoint random subsets of the given sizes, deterministic for a seed.
SplitResult split(const VectorSet& x, const std::vector<std::size_t>& sizes, std::uint64_t seed);

} // namespace qinco
