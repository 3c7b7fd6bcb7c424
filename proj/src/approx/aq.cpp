#include <qinco/approx/approx.hpp>

#include <qinco/util/binary_io.hpp>
#include <qinco/util/kernels.hpp>

namespace qinco {

namespace {

constexpr std::string_view kAqMagic = "QAQD";
constexpr std::string_view kIvfCodesMagic = "QIVC";
constexpr std::uint32_t kVersion = 1;

void put_magic(BinaryWriter& w, std::string_view magic) {
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(magic.data()), magic.size()});
    w.put<std::uint32_t>(kVersion);
}

void get_magic(BinaryReader& r, std::string_view magic) {
    r.expect_magic(magic);
    const auto v = r.get<std::uint32_t>();
    if (v != kVersion) {
        throw FormatError("unsupported container version " + std::to_string(v));
    }
}

} // namespace

VectorSet aq_decode(const AqDecoder& dec, const CodeArray& codes) {
    const std::size_t m = dec.m(), d = dec.d(), n = codes.n();
    QINCO_CHECK(codes.m() >= m, "code array has fewer columns than the decoder");
    VectorSet out(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        float* o = out.row(i).data();
        for (std::size_t s = 0; s < m; ++s) {
            const code_t c = codes(i, s);
            if (c >= dec.codebooks[s].k()) {
                throw FormatError("code " + std::to_string(c) + " out of range at row " +
                                  std::to_string(i));
            }
            const float* e = dec.codebooks[s].row(c).data();
            for (std::size_t j = 0; j < d; ++j) {
                o[j] += e[j];
            }
        }
    }
    return out;
}

AqDecoder fit_aq_ls(const CodeArray& codes, const VectorSet& x, double ridge) {
    std::vector<CodePair> pairs;
    for (std::uint32_t m = 0; m < codes.m(); ++m) {
        pairs.emplace_back(m, m);
    }
    const auto pw = fit_pairs_fixed(codes, x, pairs, PairFit::joint, ridge);
    return AqDecoder{pw.codebooks};
}

AqDecoder fit_rq_refit(const CodeArray& codes, const VectorSet& x,
                       std::vector<double>* step_mse) {
    std::vector<CodePair> pairs;
    for (std::uint32_t m = 0; m < codes.m(); ++m) {
        pairs.emplace_back(m, m);
    }
    auto pw = fit_pairs_fixed(codes, x, pairs, PairFit::sequential);
    if (step_mse) {
        *step_mse = pw.step_mse;
    }
    return AqDecoder{std::move(pw.codebooks)};
}

IvfCentroidCodes quantize_ivf_centroids(const Codebook& centroids, std::size_t m_tilde,
                                        std::size_t k, double target, std::uint64_t seed,
                                        std::size_t max_steps, std::size_t kmeans_iters) {
    const std::size_t n = centroids.k(), d = centroids.d();
    QINCO_CHECK(n >= 1 && k >= 1, "need at least one centroid and k >= 1");
    QINCO_CHECK(m_tilde >= 1 && m_tilde <= max_steps, "m_tilde must be in [1, max_steps]");

    auto relative_mse = [&](const VectorSet& recon) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double e = squared_distance(centroids.row(i).data(), recon.row(i).data(), d);
            const double c = squared_norm(centroids.row(i).data(), d);
            s += c > 0.0 ? e / c : (e > 0.0 ? 1.0 : 0.0);
        }
        return s / static_cast<double>(n);
    };

    IvfCentroidCodes out;
    if (n <= k) {
        Codebook cb(k, d);
        std::copy(centroids.entries().begin(), centroids.entries().end(), cb.entries().begin());
        out.codec.codebooks.push_back(std::move(cb));
        out.table = CodeArray(n, 1, k);
        for (std::size_t i = 0; i < n; ++i) {
            out.table(i, 0) = static_cast<code_t>(i);
        }
        out.relative_mse = relative_mse(rq_decode(out.codec, out.table));
        return out;
    }
    const VectorSet cents = centroids.as_vectors();
    for (std::size_t steps = m_tilde; steps <= max_steps; ++steps) {
        auto rq = rq_train(cents, steps, k, kmeans_iters, seed);
        auto enc = rq_encode(rq.codec, cents, 1);
        out.codec = std::move(rq.codec);
        out.table = std::move(enc.codes);
        out.relative_mse = relative_mse(rq_decode(out.codec, out.table));
        if (out.relative_mse < target) {
            break;
        }
    }
    return out;
}

CodeArray extend_codes(const CodeArray& codes, std::span<const code_t> buckets,
                       const IvfCentroidCodes& ivf) {
    QINCO_CHECK(buckets.size() == codes.n(), "one bucket per vector required");
    const std::size_t m = codes.m(), mt = ivf.m_tilde();
    CodeArray out(codes.n(), m + mt, std::max(codes.k(), ivf.codec.k()));
    for (std::size_t i = 0; i < codes.n(); ++i) {
        QINCO_CHECK(buckets[i] < ivf.table.n(), "bucket id out of range");
        auto row = out.row(i);
        std::copy(codes.row(i).begin(), codes.row(i).end(), row.begin());
        const auto t = ivf.table.row(buckets[i]);
        std::copy(t.begin(), t.end(), row.begin() + static_cast<std::ptrdiff_t>(m));
    }
    return out;
}

std::vector<std::uint8_t> serialize_aq(const AqDecoder& dec) {
    BinaryWriter w;
    put_magic(w, kAqMagic);
    w.put<std::uint64_t>(dec.m());
    w.put<std::uint64_t>(dec.k());
    w.put<std::uint64_t>(dec.d());
    for (const auto& cb : dec.codebooks) {
        w.put_raw<float>(cb.entries());
    }
    return w.take();
}

AqDecoder deserialize_aq(std::span<const std::uint8_t> bytes) {
    BinaryReader r(bytes);
    get_magic(r, kAqMagic);
    const auto m = r.get<std::uint64_t>(), k = r.get<std::uint64_t>(), d = r.get<std::uint64_t>();
    if (m > 4096 || k > (1U << 24) || d > (1U << 16)) {
        throw FormatError("implausible AQ decoder shape");
    }
    AqDecoder dec;
    for (std::size_t s = 0; s < m; ++s) {
        dec.codebooks.emplace_back(k, d, r.get_raw<float>(k * d));
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after AQ decoder");
    }
    return dec;
}

std::vector<std::uint8_t> serialize_ivf_codes(const IvfCentroidCodes& ivf) {
    BinaryWriter w;
    put_magic(w, kIvfCodesMagic);
    const auto codec = serialize_rq(ivf.codec);
    w.put_array<std::uint8_t>(codec);
    w.put<std::uint64_t>(ivf.table.n());
    w.put<std::uint64_t>(ivf.table.m());
    w.put<std::uint64_t>(ivf.table.k());
    w.put_raw<code_t>(ivf.table.codes());
    w.put<double>(ivf.relative_mse);
    return w.take();
}

IvfCentroidCodes deserialize_ivf_codes(std::span<const std::uint8_t> bytes) {
    BinaryReader r(bytes);
    get_magic(r, kIvfCodesMagic);
    IvfCentroidCodes ivf;
    const auto codec = r.get_array<std::uint8_t>();
    ivf.codec = deserialize_rq(codec);
    const auto n = r.get<std::uint64_t>(), m = r.get<std::uint64_t>(), k = r.get<std::uint64_t>();
    if (m != ivf.codec.m() || n > (1U << 24)) {
        throw FormatError("IVF code table does not match its codec");
    }
    ivf.table = CodeArray(n, m, k, r.get_raw<code_t>(n * m));
    ivf.table.validate();
    ivf.relative_mse = r.get<double>();
    if (!r.at_end()) {
        throw FormatError("trailing bytes after IVF centroid codes");
    }
    return ivf;
}

} // namespace qinco
