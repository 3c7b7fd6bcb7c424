#include <qinco/baseline/rq.hpp>

#include <qinco/util/binary_io.hpp>
#include <qinco/util/kernels.hpp>
#include <qinco/util/random.hpp>

#include <algorithm>
#include <numeric>

namespace qinco {

namespace {

constexpr std::string_view kRqMagic = "QRQC";
constexpr std::uint32_t kRqVersion = 1;

struct Expansion {
    double loss;
    std::uint32_t hyp;
    code_t code;
};

} // namespace

RqTrainResult rq_train(const VectorSet& data, std::size_t m, std::size_t k,
                       std::size_t kmeans_iters, std::uint64_t seed) {
    QINCO_CHECK(m >= 1, "m must be >= 1");
    const std::size_t n = data.n(), d = data.d();
    RqTrainResult res;
    VectorSet xhat(n, d);
    VectorSet residual = data;

    auto mse_now = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s += squared_distance(data.row(i).data(), xhat.row(i).data(), d);
        }
        return n ? s / static_cast<double>(n) : 0.0;
    };
    res.step_mse.push_back(mse_now());

    for (std::size_t step = 0; step < m; ++step) {
        auto km = kmeans(residual, k, kmeans_iters, Rng::mix(seed, step));
        for (auto& w : km.warnings) {
            res.warnings.push_back("step " + std::to_string(step) + ": " + w);
        }
        // Codebooks keep a uniform K even when k-means had fewer points.
        Codebook cb(k, d);
        std::copy(km.centroids.entries().begin(), km.centroids.entries().end(),
                  cb.entries().begin());
        const auto nearest = nearest_rows(residual.data(), n, cb.data(), cb.k(), d);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = cb.row(nearest.index[i]);
            auto xh = xhat.row(i);
            auto r = residual.row(i);
            const auto x = data.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                xh[j] += c[j];
                r[j] = x[j] - xh[j];
            }
        }
        res.codec.codebooks.push_back(std::move(cb));
        res.step_mse.push_back(mse_now());
    }
    return res;
}

RqEncodeResult rq_encode(const RqCodec& codec, const VectorSet& x, std::size_t beam) {
    QINCO_CHECK(beam >= 1, "beam must be >= 1");
    const std::size_t n = x.n(), m = codec.m(), k = codec.k(), d = codec.d();
    QINCO_CHECK(n == 0 || x.d() == d, "dimension mismatch");
    RqEncodeResult res{CodeArray(n, m, k), std::vector<double>(n, 0.0)};

#pragma omp parallel
    {
        std::vector<code_t> hyp_codes(beam * m), next_codes(beam * m);
        std::vector<float> hyp_xhat(beam * d), next_xhat(beam * d), tmp(d);
        std::vector<double> hyp_loss(beam), next_loss(beam);
        std::vector<Expansion> exps;

#pragma omp for schedule(dynamic, 16)
        for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            const float* xi = x.row(i).data();
            std::size_t nh = 1;
            std::fill_n(hyp_xhat.begin(), d, 0.0F);
            hyp_loss[0] = squared_norm(xi, d);

            for (std::size_t step = 0; step < m; ++step) {
                const Codebook& cb = codec.codebooks[step];
                exps.clear();
                for (std::size_t h = 0; h < nh; ++h) {
                    const float* xh = hyp_xhat.data() + h * d;
                    for (std::size_t c = 0; c < k; ++c) {
                        const float* cr = cb.row(c).data();
                        for (std::size_t j = 0; j < d; ++j) {
                            tmp[j] = xh[j] + cr[j];
                        }
                        exps.push_back({squared_distance(xi, tmp.data(), d),
                                        static_cast<std::uint32_t>(h), static_cast<code_t>(c)});
                    }
                }
                auto before = [&](const Expansion& a, const Expansion& b) {
                    if (a.loss != b.loss) {
                        return a.loss < b.loss;
                    }
                    if (a.hyp != b.hyp) {
                        const code_t* ca = hyp_codes.data() + a.hyp * m;
                        const code_t* cbp = hyp_codes.data() + b.hyp * m;
                        return std::lexicographical_compare(ca, ca + step, cbp, cbp + step);
                    }
                    return a.code < b.code;
                };
                const std::size_t keep = std::min(beam, exps.size());
                std::partial_sort(exps.begin(), exps.begin() + keep, exps.end(), before);
                for (std::size_t b = 0; b < keep; ++b) {
                    const auto& e = exps[b];
                    std::copy_n(hyp_codes.begin() + e.hyp * m, step, next_codes.begin() + b * m);
                    next_codes[b * m + step] = e.code;
                    const float* xh = hyp_xhat.data() + e.hyp * d;
                    const float* cr = cb.row(e.code).data();
                    float* out = next_xhat.data() + b * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        out[j] = xh[j] + cr[j];
                    }
                    next_loss[b] = e.loss;
                }
                nh = keep;
                std::swap(hyp_codes, next_codes);
                std::swap(hyp_xhat, next_xhat);
                std::swap(hyp_loss, next_loss);
            }
            std::copy_n(hyp_codes.begin(), m, res.codes.row(i).begin());
            res.losses[i] = hyp_loss[0];
        }
    }
    return res;
}

VectorSet rq_decode(const RqCodec& codec, const CodeArray& codes) {
    QINCO_CHECK(codes.m() == codec.m(), "code width != number of codebooks");
    const std::size_t d = codec.d(), k = codec.k();
    for (auto c : codes.codes()) {
        if (c >= k) {
            throw FormatError("code " + std::to_string(c) + " out of range (k=" +
                              std::to_string(k) + ")");
        }
    }
    VectorSet out(codes.n(), d);
    for (std::size_t i = 0; i < codes.n(); ++i) {
        auto row = out.row(i);
        for (std::size_t s = 0; s < codec.m(); ++s) {
            const auto c = codec.codebooks[s].row(codes(i, s));
            for (std::size_t j = 0; j < d; ++j) {
                row[j] += c[j];
            }
        }
    }
    return out;
}

std::vector<std::uint8_t> serialize_rq(const RqCodec& codec) {
    BinaryWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kRqMagic.data()), kRqMagic.size()});
    w.put<std::uint32_t>(kRqVersion);
    w.put<std::uint64_t>(codec.m());
    w.put<std::uint64_t>(codec.k());
    w.put<std::uint64_t>(codec.d());
    w.put<std::uint64_t>(codec.beam_default);
    for (const auto& cb : codec.codebooks) {
        w.put_raw<float>(cb.entries());
    }
    return w.take();
}

RqCodec deserialize_rq(std::span<const std::uint8_t> bytes) {
    BinaryReader r(bytes);
    r.expect_magic(kRqMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kRqVersion) {
        throw FormatError("unsupported RQ codec version " + std::to_string(version));
    }
    const auto m = r.get<std::uint64_t>(), k = r.get<std::uint64_t>(), d = r.get<std::uint64_t>();
    RqCodec codec;
    codec.beam_default = r.get<std::uint64_t>();
    for (std::uint64_t s = 0; s < m; ++s) {
        codec.codebooks.emplace_back(k, d, r.get_raw<float>(k * d));
    }
    return codec;
}

void save_rq(const std::filesystem::path& path, const RqCodec& codec) {
    write_file_bytes(path, serialize_rq(codec));
}

RqCodec load_rq(const std::filesystem::path& path) {
    return deserialize_rq(read_file_bytes(path));
}

} // namespace qinco
