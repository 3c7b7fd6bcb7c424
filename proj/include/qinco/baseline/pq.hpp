#pragma once

#include <qinco/baseline/codebook.hpp>

#include <cstdint>
#include <vector>

namespace qinco {

/// Product quantizer over contiguous coordinate slices.
struct PqCodec {
    std::vector<std::size_t> sub_dims;
    std::vector<Codebook> codebooks;

    std::size_t m() const { return sub_dims.size(); }
    std::size_t d() const;
    std::size_t k() const { return codebooks.empty() ? 0 : codebooks.front().k(); }
};

/// Slices are as even as possible; the first d % m slices get one extra dim.
PqCodec pq_train(const VectorSet& data, std::size_t m, std::size_t k, std::size_t kmeans_iters,
                 std::uint64_t seed);
CodeArray pq_encode(const PqCodec& codec, const VectorSet& x);
VectorSet pq_decode(const PqCodec& codec, const CodeArray& codes);

} // namespace qinco
