#pragma once

#include <qinco/util/common.hpp>

#include <span>
#include <vector>

namespace qinco {

/// A dense in x out matrix W packed for row-wise products y = x W.
///
/// Every output row is produced by the same instruction sequence regardless
/// of how many rows are processed together or where a row sits in the batch,
/// so results are bit-identical between batched encoding, one-row decoding
/// and any thread partitioning.
class PackedMatrix {
public:
    PackedMatrix() = default;
    /// `w` is row-major in x out.
    PackedMatrix(std::size_t in, std::size_t out, std::span<const float> w);
    /// Packs the transpose of a row-major rows x cols table, i.e. y = x T^T.
    static PackedMatrix transpose_of(std::size_t rows, std::size_t cols, std::span<const float> t);

    std::size_t in() const { return in_; }
    std::size_t out() const { return out_; }
    bool empty() const { return in_ == 0; }

    /// y[r, :out] = x[r, :in] W for r < n.
    void apply(const float* x, std::size_t n, std::size_t x_stride, float* y,
               std::size_t y_stride) const;

private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    std::size_t ld_ = 0; // padded row length
    std::vector<float> w_;
};

/// Sum of squared differences accumulated in double, fixed left-to-right order.
double squared_distance(const float* a, const float* b, std::size_t d);
double squared_norm(const float* a, std::size_t d);

/// Nearest table row (exact squared distance, ties to the smaller index) for
/// each query row. Candidates are screened with a float inner-product pass
/// and confirmed with squared_distance.
struct NearestResult {
    std::vector<code_t> index;
    std::vector<double> distance;
};

NearestResult nearest_rows(const float* queries, std::size_t n, const float* table,
                           std::size_t k, std::size_t d);

} // namespace qinco
