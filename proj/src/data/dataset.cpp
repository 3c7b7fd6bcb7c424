#include <qinco/data/dataset.hpp>

#include <qinco/util/random.hpp>

#include <cmath>
#include <numeric>

namespace qinco {

NormStats fit_norm(const VectorSet& train) {
    if (train.n() < 2) {
        throw ConfigError("fit_norm: insufficient data (need at least 2 vectors, got " +
                          std::to_string(train.n()) + ")");
    }
    const std::size_t n = train.n(), d = train.d();
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = train.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            mean[j] += r[j];
        }
    }
    for (auto& m : mean) {
        m /= static_cast<double>(n);
    }
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = train.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = r[j] - mean[j];
            ss += c * c;
        }
    }
    NormStats s;
    s.mean.assign(mean.begin(), mean.end());
    const double var = ss / static_cast<double>(n * d);
    s.scale = std::max(static_cast<float>(std::sqrt(var)), kMinNormScale);
    return s;
}

VectorSet apply_norm(const VectorSet& x, const NormStats& s, NormDirection direction) {
    if (x.d() != s.d() && x.n() > 0) {
        throw ConfigError("apply_norm: dimension mismatch (data d=" + std::to_string(x.d()) +
                          ", stats d=" + std::to_string(s.d()) + ")");
    }
    VectorSet out(x.n(), x.d());
    const std::size_t d = x.d();
    for (std::size_t i = 0; i < x.n(); ++i) {
        const auto src = x.row(i);
        auto dst = out.row(i);
        if (direction == NormDirection::forward) {
            for (std::size_t j = 0; j < d; ++j) {
                dst[j] = static_cast<float>((static_cast<double>(src[j]) - s.mean[j]) / s.scale);
            }
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                dst[j] = static_cast<float>(static_cast<double>(src[j]) * s.scale + s.mean[j]);
            }
        }
    }
    return out;
}

VectorSet synth_gmm(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t components,
                    double spread) {
    QINCO_CHECK(components >= 1, "components must be >= 1");
    QINCO_CHECK(d >= 1, "d must be >= 1");
    QINCO_CHECK(spread >= 0.0, "spread must be >= 0");
    Rng rng(seed);
    std::vector<double> centers(components * d);
    for (auto& c : centers) {
        c = rng.normal();
    }
    VectorSet out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = rng.below(components);
        auto row = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double noise = spread * rng.normal();
            row[j] = static_cast<float>(centers[c * d + j] + noise);
        }
    }
    return out;
}

SplitResult split(const VectorSet& x, const std::vector<std::size_t>& sizes, std::uint64_t seed) {
    const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
    if (total > x.n()) {
        throw ConfigError("split: requested " + std::to_string(total) + " vectors but only " +
                          std::to_string(x.n()) + " available");
    }
    std::vector<std::size_t> perm(x.n());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(perm);

    SplitResult result;
    std::size_t offset = 0;
    for (auto sz : sizes) {
        std::vector<std::size_t> idx(perm.begin() + offset, perm.begin() + offset + sz);
        offset += sz;
        auto part = x.gather(idx);
        if (sz == 0) {
            part = VectorSet(0, x.d());
        }
        result.parts.push_back(std::move(part));
        result.indices.push_back(std::move(idx));
    }
    return result;
}

} // namespace qinco
