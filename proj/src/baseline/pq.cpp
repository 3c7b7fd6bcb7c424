#include <qinco/baseline/pq.hpp>

#include <qinco/baseline/kmeans.hpp>
#include <qinco/util/kernels.hpp>
#include <qinco/util/random.hpp>

#include <numeric>

namespace qinco {

namespace {

VectorSet column_slice(const VectorSet& x, std::size_t begin, std::size_t width) {
    VectorSet out(x.n(), width);
    for (std::size_t i = 0; i < x.n(); ++i) {
        std::copy_n(x.row(i).data() + begin, width, out.row(i).data());
    }
    return out;
}

} // namespace

std::size_t PqCodec::d() const {
    return std::accumulate(sub_dims.begin(), sub_dims.end(), std::size_t{0});
}

PqCodec pq_train(const VectorSet& data, std::size_t m, std::size_t k, std::size_t kmeans_iters,
                 std::uint64_t seed) {
    QINCO_CHECK(m >= 1 && m <= data.d(), "need 1 <= m <= d");
    PqCodec codec;
    const std::size_t base = data.d() / m, extra = data.d() % m;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < m; ++s) {
        const std::size_t w = base + (s < extra ? 1 : 0);
        auto km = kmeans(column_slice(data, offset, w), k, kmeans_iters, Rng::mix(seed, s));
        Codebook cb(k, w);
        std::copy(km.centroids.entries().begin(), km.centroids.entries().end(),
                  cb.entries().begin());
        codec.sub_dims.push_back(w);
        codec.codebooks.push_back(std::move(cb));
        offset += w;
    }
    return codec;
}

CodeArray pq_encode(const PqCodec& codec, const VectorSet& x) {
    if (x.n() > 0 && x.d() != codec.d()) {
        throw ConfigError("pq_encode: dimension mismatch");
    }
    CodeArray codes(x.n(), codec.m(), codec.k());
    std::size_t offset = 0;
    for (std::size_t s = 0; s < codec.m(); ++s) {
        const auto sub = column_slice(x, offset, codec.sub_dims[s]);
        const auto& cb = codec.codebooks[s];
        const auto nearest = nearest_rows(sub.data(), sub.n(), cb.data(), cb.k(), cb.d());
        for (std::size_t i = 0; i < x.n(); ++i) {
            codes(i, s) = nearest.index[i];
        }
        offset += codec.sub_dims[s];
    }
    return codes;
}

VectorSet pq_decode(const PqCodec& codec, const CodeArray& codes) {
    if (codes.m() != codec.m()) {
        throw ConfigError("pq_decode: code width mismatch");
    }
    codes.validate();
    VectorSet out(codes.n(), codec.d());
    for (std::size_t i = 0; i < codes.n(); ++i) {
        std::size_t offset = 0;
        for (std::size_t s = 0; s < codec.m(); ++s) {
            const auto c = codec.codebooks[s].row(codes(i, s));
            std::copy(c.begin(), c.end(), out.row(i).begin() + offset);
            offset += codec.sub_dims[s];
        }
    }
    return out;
}

} // namespace qinco
