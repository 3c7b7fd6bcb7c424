#include <qinco/data/vector_set.hpp>

#include <algorithm>
#include <cmath>

namespace qinco {

VectorSet::VectorSet(std::size_t n, std::size_t d, std::vector<float> values)
    : n_(n), d_(d), values_(std::move(values)) {
    QINCO_CHECK(values_.size() == n_ * d_, "values length != n*d");
}

VectorSet VectorSet::slice(std::size_t begin, std::size_t end) const {
    QINCO_CHECK(begin <= end && end <= n_, "slice out of range");
    return VectorSet(end - begin, d_,
                     std::vector<float>(values_.begin() + begin * d_,
                                        values_.begin() + end * d_));
}

VectorSet VectorSet::gather(std::span<const std::size_t> rows) const {
    VectorSet out(rows.size(), d_);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        QINCO_CHECK(rows[i] < n_, "row index out of range");
        std::copy_n(values_.data() + rows[i] * d_, d_, out.data() + i * d_);
    }
    return out;
}

bool VectorSet::all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](float v) { return std::isfinite(v); });
}

CodeArray::CodeArray(std::size_t n, std::size_t m, std::size_t k, std::vector<code_t> codes)
    : n_(n), m_(m), k_(k), codes_(std::move(codes)) {
    QINCO_CHECK(codes_.size() == n_ * m_, "codes length != n*m");
}

void CodeArray::validate() const {
    for (std::size_t i = 0; i < codes_.size(); ++i) {
        if (codes_[i] >= k_) {
            throw FormatError("code " + std::to_string(codes_[i]) + " at row " +
                              std::to_string(i / std::max<std::size_t>(m_, 1)) +
                              " out of range (k=" + std::to_string(k_) + ")");
        }
    }
}

CodeArray CodeArray::truncate(std::size_t m) const {
    QINCO_CHECK(m <= m_, "cannot truncate to more columns");
    CodeArray out(n_, m, k_);
    for (std::size_t i = 0; i < n_; ++i) {
        std::copy_n(codes_.data() + i * m_, m, out.codes_.data() + i * m);
    }
    return out;
}

CodeArray CodeArray::slice(std::size_t begin, std::size_t end) const {
    QINCO_CHECK(begin <= end && end <= n_, "slice out of range");
    return CodeArray(end - begin, m_, k_,
                     std::vector<code_t>(codes_.begin() + begin * m_,
                                         codes_.begin() + end * m_));
}

} // namespace qinco
