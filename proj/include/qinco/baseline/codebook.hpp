#pragma once

#include <qinco/data/vector_set.hpp>

#include <span>
#include <vector>

namespace qinco {

/// k x d table of centroids.
class Codebook {
public:
    Codebook() = default;
    Codebook(std::size_t k, std::size_t d) : k_(k), d_(d), entries_(k * d, 0.0F) {}
    Codebook(std::size_t k, std::size_t d, std::vector<float> entries);
    explicit Codebook(const VectorSet& rows) : Codebook(rows.n(), rows.d(), rows.values()) {}

    std::size_t k() const { return k_; }
    std::size_t d() const { return d_; }

    std::span<float> row(std::size_t i) { return {entries_.data() + i * d_, d_}; }
    std::span<const float> row(std::size_t i) const { return {entries_.data() + i * d_, d_}; }
    float* data() { return entries_.data(); }
    const float* data() const { return entries_.data(); }
    const std::vector<float>& entries() const { return entries_; }
    std::vector<float>& entries() { return entries_; }

    VectorSet as_vectors() const { return VectorSet(k_, d_, entries_); }

    friend bool operator==(const Codebook&, const Codebook&) = default;

private:
    std::size_t k_ = 0;
    std::size_t d_ = 0;
    std::vector<float> entries_;
};

} // namespace qinco
