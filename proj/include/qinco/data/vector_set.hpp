#pragma once

#include <qinco/util/common.hpp>

#include <span>
#include <vector>

namespace qinco {

/// Dense row-major set of n vectors of dimension d.
class VectorSet {
public:
    VectorSet() = default;
    VectorSet(std::size_t n, std::size_t d) : n_(n), d_(d), values_(n * d, 0.0F) {}
    VectorSet(std::size_t n, std::size_t d, std::vector<float> values);

    std::size_t n() const { return n_; }
    std::size_t d() const { return d_; }
    bool empty() const { return n_ == 0; }

    std::span<float> row(std::size_t i) { return {values_.data() + i * d_, d_}; }
    std::span<const float> row(std::size_t i) const {
        return {values_.data() + i * d_, d_};
    }

    float* data() { return values_.data(); }
    const float* data() const { return values_.data(); }
    const std::vector<float>& values() const { return values_; }

    /// Rows [begin, end) as a new set.
    VectorSet slice(std::size_t begin, std::size_t end) const;
    VectorSet gather(std::span<const std::size_t> rows) const;

    bool all_finite() const;

    friend bool operator==(const VectorSet&, const VectorSet&) = default;

private:
    std::size_t n_ = 0;
    std::size_t d_ = 0;
    std::vector<float> values_;
};

/// n x m table of code indices, each below k.
class CodeArray {
public:
    CodeArray() = default;
    CodeArray(std::size_t n, std::size_t m, std::size_t k)
        : n_(n), m_(m), k_(k), codes_(n * m, 0) {}
    CodeArray(std::size_t n, std::size_t m, std::size_t k, std::vector<code_t> codes);

    std::size_t n() const { return n_; }
    std::size_t m() const { return m_; }
    std::size_t k() const { return k_; }

    std::span<code_t> row(std::size_t i) { return {codes_.data() + i * m_, m_}; }
    std::span<const code_t> row(std::size_t i) const {
        return {codes_.data() + i * m_, m_};
    }
    code_t operator()(std::size_t i, std::size_t j) const { return codes_[i * m_ + j]; }
    code_t& operator()(std::size_t i, std::size_t j) { return codes_[i * m_ + j]; }

    const std::vector<code_t>& codes() const { return codes_; }

    /// Throws FormatError if any code is >= k.
    void validate() const;

    /// Keeps the first `m` columns.
    CodeArray truncate(std::size_t m) const;
    CodeArray slice(std::size_t begin, std::size_t end) const;

    friend bool operator==(const CodeArray&, const CodeArray&) = default;

private:
    std::size_t n_ = 0;
    std::size_t m_ = 0;
    std::size_t k_ = 0;
    std::vector<code_t> codes_;
};

/// Integer table read from ivecs files (ground truth, ids).
struct IdTable {
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<std::int32_t> ids;

    std::span<const std::int32_t> row(std::size_t i) const {
        return {ids.data() + i * k, k};
    }

    friend bool operator==(const IdTable&, const IdTable&) = default;
};

} // namespace qinco
