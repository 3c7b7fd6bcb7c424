#pragma once

#include <qinco/baseline/codebook.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace qinco {

struct ReseedEvent {
    std::size_t iteration = 0;
    std::size_t cluster = 0;
    std::size_t point = 0;
};

struct KMeansResult {
    Codebook centroids;
    /// objective[0] is the mean squared distance for the initial centroids,
    /// objective[t] the value after iteration t.
    std::vector<double> objective;
    std::vector<code_t> assignment;
    std::vector<ReseedEvent> reseeds;
    std::vector<std::string> warnings;

    double final_mse() const { return objective.back(); }
};

enum class KMeansInit {
    /// k distinct data points drawn uniformly.
    sample,
    /// D^2-weighted seeding (k-means++).
    plus_plus,
};

/// Lloyd's algorithm. Initial centroids are k distinct data points chosen
/// with `seed`; empty clusters are re-seeded from the point farthest from its
/// centroid. If k > n, k is reduced to n and a warning recorded.
KMeansResult kmeans(const VectorSet& data, std::size_t k, std::size_t iters, std::uint64_t seed,
                    KMeansInit init = KMeansInit::sample);

/// Mean squared distance from each row to its nearest centroid.
double quantization_mse(const VectorSet& data, const Codebook& centroids);

} // namespace qinco
