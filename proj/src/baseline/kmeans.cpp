#include <qinco/baseline/kmeans.hpp>

#include <qinco/util/kernels.hpp>
#include <qinco/util/random.hpp>

#include <algorithm>
#include <numeric>

namespace qinco {

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<std::size_t> plus_plus_seeds(const VectorSet& data, std::size_t k, Rng& rng) {
    const std::size_t n = data.n(), d = data.d();
    std::vector<std::size_t> chosen{static_cast<std::size_t>(rng.below(n))};
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        dist[i] = squared_distance(data.row(i).data(), data.row(chosen[0]).data(), d);
    }
    while (chosen.size() < k) {
        const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0.0) {
            double u = rng.uniform() * total;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                if (dist[i] > 0.0 && u < dist[i]) {
                    pick = i;
                    break;
                }
                u -= dist[i];
            }
            while (dist[pick] == 0.0) {
                --pick;
            }
        } else {
            // Fewer distinct points than k: take the first unchosen index.
            while (std::find(chosen.begin(), chosen.end(), pick) != chosen.end()) {
                ++pick;
            }
        }
        chosen.push_back(pick);
        const float* c = data.row(pick).data();
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = std::min(dist[i], squared_distance(data.row(i).data(), c, d));
        }
        dist[pick] = 0.0;
    }
    return chosen;
}

} // namespace

KMeansResult kmeans(const VectorSet& data, std::size_t k, std::size_t iters, std::uint64_t seed,
                    KMeansInit init_mode) {
    QINCO_CHECK(data.n() >= 1, "kmeans needs at least one point");
    QINCO_CHECK(k >= 1, "k must be >= 1");
    KMeansResult res;
    const std::size_t n = data.n(), d = data.d();
    if (k > n) {
        res.warnings.push_back("k=" + std::to_string(k) + " exceeds n=" + std::to_string(n) +
                               "; reduced to " + std::to_string(n));
        k = n;
    }

    Rng rng(seed);
    const auto init = init_mode == KMeansInit::plus_plus ? plus_plus_seeds(data, k, rng)
                                                         : rng.sample_distinct(n, k);
    res.centroids = Codebook(k, d);
    for (std::size_t c = 0; c < k; ++c) {
        std::copy_n(data.row(init[c]).data(), d, res.centroids.row(c).data());
    }

    auto nearest = nearest_rows(data.data(), n, res.centroids.data(), k, d);
    res.objective.push_back(mean_of(nearest.distance));

    std::vector<double> sums(k * d);
    std::vector<std::size_t> counts(k);
    for (std::size_t it = 1; it <= iters; ++it) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = nearest.index[i];
            const auto r = data.row(i);
            double* s = sums.data() + c * d;
            for (std::size_t j = 0; j < d; ++j) {
                s[j] += r[j];
            }
            ++counts[c];
        }
        std::vector<double> dist = nearest.distance;
        for (std::size_t c = 0; c < k; ++c) {
            auto row = res.centroids.row(c);
            if (counts[c] > 0) {
                for (std::size_t j = 0; j < d; ++j) {
                    row[j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
                }
                continue;
            }
            // Farthest point from its assigned centroid, smallest index on ties.
            std::size_t far = 0;
            for (std::size_t i = 1; i < n; ++i) {
                if (dist[i] > dist[far]) {
                    far = i;
                }
            }
            std::copy_n(data.row(far).data(), d, row.data());
            dist[far] = -1.0;
            res.reseeds.push_back({it, c, far});
        }
        nearest = nearest_rows(data.data(), n, res.centroids.data(), k, d);
        res.objective.push_back(mean_of(nearest.distance));
    }
    res.assignment = std::move(nearest.index);
    return res;
}

double quantization_mse(const VectorSet& data, const Codebook& centroids) {
    if (data.n() == 0) {
        return 0.0;
    }
    const auto nearest =
        nearest_rows(data.data(), data.n(), centroids.data(), centroids.k(), data.d());
    return mean_of(nearest.distance);
}

} // namespace qinco
