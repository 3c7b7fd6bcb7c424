#include <qinco/baseline/kmeans.hpp>
#include <qinco/data/dataset.hpp>
#include <qinco/data/vecs_io.hpp>
#include <qinco/util/binary_io.hpp>
#include <qinco/util/kernels.hpp>
#include <qinco/util/random.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

using namespace qinco;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    auto dir = fs::temp_directory_path() / "qinco_unit";
    fs::create_directories(dir);
    return dir / name;
}

std::vector<std::uint8_t> record(std::int32_t dim, const void* payload, std::size_t bytes) {
    std::vector<std::uint8_t> out(4 + bytes);
    std::memcpy(out.data(), &dim, 4);
    std::memcpy(out.data() + 4, payload, bytes);
    return out;
}

} // namespace

TEST(Vecs, ReadsFvecs) {
    const float a[] = {1.0F, 2.0F}, b[] = {3.0F, 4.0F};
    auto bytes = record(2, a, 8);
    auto r2 = record(2, b, 8);
    bytes.insert(bytes.end(), r2.begin(), r2.end());
    const auto p = temp_path("two.fvecs");
    write_file_bytes(p, bytes);
    const auto x = read_vectors(p);
    EXPECT_EQ(x.n(), 2U);
    EXPECT_EQ(x.d(), 2U);
    EXPECT_EQ(x.values(), (std::vector<float>{1, 2, 3, 4}));
    EXPECT_EQ(read_vectors(p, 1).n(), 1U);
    EXPECT_EQ(read_vectors(p, 10).n(), 2U);
}

TEST(Vecs, EmptyFile) {
    const auto p = temp_path("empty.fvecs");
    write_file_bytes(p, {});
    const auto x = read_vectors(p);
    EXPECT_EQ(x.n(), 0U);
    EXPECT_EQ(x.d(), 0U);
}

TEST(Vecs, BvecsWidening) {
    const std::uint8_t v[] = {0, 128, 255};
    const auto p = temp_path("one.bvecs");
    write_file_bytes(p, record(3, v, 3));
    const auto x = read_vectors(p);
    EXPECT_EQ(x.values(), (std::vector<float>{0.0F, 128.0F, 255.0F}));
}

TEST(Vecs, TruncatedRecordReportsOffset) {
    const float a[] = {1.0F, 2.0F};
    auto bytes = record(2, a, 8);
    auto r2 = record(2, a, 8);
    bytes.insert(bytes.end(), r2.begin(), r2.end() - 3);
    const auto p = temp_path("trunc.fvecs");
    write_file_bytes(p, bytes);
    try {
        read_vectors(p);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("12"), std::string::npos) << e.what();
    }
}

TEST(Vecs, InconsistentDimNamesBoth) {
    const float a[] = {1.0F, 2.0F, 3.0F};
    auto bytes = record(2, a, 8);
    auto r2 = record(3, a, 12);
    bytes.insert(bytes.end(), r2.begin(), r2.end());
    const auto p = temp_path("mixed.fvecs");
    write_file_bytes(p, bytes);
    try {
        read_vectors(p);
        FAIL() << "expected FormatError";
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find('2'), std::string::npos);
        EXPECT_NE(msg.find('3'), std::string::npos);
    }
}

TEST(Vecs, RoundtripIsByteIdentical) {
    const auto x = synth_gmm(3, 17, 5, 3, 0.5);
    const auto p = temp_path("rt.fvecs");
    write_fvecs(p, x);
    const auto original = read_file_bytes(p);
    const auto q = temp_path("rt2.fvecs");
    write_fvecs(q, read_vectors(p));
    EXPECT_EQ(read_file_bytes(q), original);

    VectorSet b(2, 3, {0, 1, 2, 253, 254, 255});
    const auto pb = temp_path("rt.bvecs");
    write_bvecs(pb, b);
    const auto pb2 = temp_path("rt2.bvecs");
    write_bvecs(pb2, read_vectors(pb));
    EXPECT_EQ(read_file_bytes(pb2), read_file_bytes(pb));

    IdTable ids{2, 3, {0, 5, 7, 1, -1, 9}};
    const auto pi = temp_path("rt.ivecs");
    write_ivecs(pi, ids);
    EXPECT_EQ(read_ivecs(pi), ids);
}

TEST(Norm, PooledScale) {
    const auto s = fit_norm(VectorSet(2, 2, {0, 0, 2, 2}));
    EXPECT_EQ(s.mean, (std::vector<float>{1, 1}));
    EXPECT_FLOAT_EQ(s.scale, 1.0F);
}

TEST(Norm, ConstantDataClamps) {
    const auto s = fit_norm(VectorSet(2, 2, {5, 5, 5, 5}));
    EXPECT_EQ(s.mean, (std::vector<float>{5, 5}));
    EXPECT_FLOAT_EQ(s.scale, 1e-12F);
}

TEST(Norm, NeedsTwoVectors) {
    EXPECT_THROW(fit_norm(VectorSet(1, 2, {1, 2})), ConfigError);
}

TEST(Norm, ApplyAndInvert) {
    NormStats s{{1, 1}, 2.0F};
    const auto y = apply_norm(VectorSet(1, 2, {3, 3}), s, NormDirection::forward);
    EXPECT_EQ(y.values(), (std::vector<float>{1, 1}));

    NormStats id{{0, 0}, 1.0F};
    VectorSet x(1, 2, {0.25F, -7.0F});
    EXPECT_EQ(apply_norm(x, id, NormDirection::forward), x);
    EXPECT_THROW(apply_norm(VectorSet(1, 3), s, NormDirection::forward), ConfigError);
}

TEST(Norm, FittedSetIsStandardized) {
    auto x = synth_gmm(11, 2000, 8, 5, 0.3);
    for (std::size_t i = 0; i < x.n(); ++i) {
        for (std::size_t j = 0; j < x.d(); ++j) {
            x.row(i)[j] = x.row(i)[j] * 3.0F + static_cast<float>(j);
        }
    }
    const auto s = fit_norm(x);
    const auto y = apply_norm(x, s, NormDirection::forward);
    double sq = 0.0;
    for (std::size_t j = 0; j < y.d(); ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < y.n(); ++i) {
            mu += y.row(i)[j];
            sq += static_cast<double>(y.row(i)[j]) * y.row(i)[j];
        }
        EXPECT_LT(std::abs(mu / static_cast<double>(y.n())), 1e-5);
    }
    EXPECT_NEAR(std::sqrt(sq / static_cast<double>(y.n() * y.d())), 1.0, 1e-4);

    const auto back = apply_norm(y, s, NormDirection::inverse);
    for (std::size_t i = 0; i < x.values().size(); ++i) {
        EXPECT_NEAR(back.values()[i], x.values()[i], 1e-5 * std::max(1.0F, std::abs(x.values()[i])));
    }
}

TEST(Synth, DeterministicBytes) {
    const auto a = synth_gmm(7, 500, 6, 4, 0.1);
    const auto b = synth_gmm(7, 500, 6, 4, 0.1);
    ASSERT_EQ(a.values().size(), b.values().size());
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.values().size() * sizeof(float)), 0);
    EXPECT_NE(synth_gmm(8, 500, 6, 4, 0.1), a);
}

TEST(Synth, ZeroSpreadHitsCenters) {
    const auto x = synth_gmm(5, 300, 4, 3, 0.0);
    std::set<std::vector<float>> distinct;
    for (std::size_t i = 0; i < x.n(); ++i) {
        distinct.emplace(x.row(i).begin(), x.row(i).end());
    }
    EXPECT_LE(distinct.size(), 3U);
}

TEST(Synth, KMeansReachesNoiseFloor) {
    const std::size_t d = 16;
    const double spread = 0.05;
    const auto x = synth_gmm(7, 10000, d, 16, spread);
    // The generating centers are exactly the noiseless points of the same seed.
    const auto centers = synth_gmm(7, 10000, d, 16, 0.0);
    double oracle = 0.0;
    for (std::size_t i = 0; i < x.n(); ++i) {
        oracle += squared_distance(x.row(i).data(), centers.row(i).data(), d);
    }
    oracle /= static_cast<double>(x.n());
    EXPECT_NEAR(oracle, d * spread * spread, 0.05 * d * spread * spread);
    // Uniformly sampled starts leave Lloyd stuck with merged clusters here;
    // D^2 seeding finds every component.
    EXPECT_LE(kmeans(x, 16, 25, 1, KMeansInit::plus_plus).final_mse(), 1.1 * oracle);
}

TEST(Split, Partitions) {
    const auto x = synth_gmm(1, 50, 3, 2, 1.0);
    const auto all = split(x, {50, 0}, 4);
    EXPECT_EQ(all.parts[0].n(), 50U);
    EXPECT_EQ(all.parts[1].n(), 0U);
    std::set<std::size_t> seen(all.indices[0].begin(), all.indices[0].end());
    EXPECT_EQ(seen.size(), 50U);

    const auto s = split(x, {20, 10, 5}, 9);
    std::set<std::size_t> used;
    for (std::size_t p = 0; p < 3; ++p) {
        for (std::size_t j = 0; j < s.indices[p].size(); ++j) {
            const auto idx = s.indices[p][j];
            EXPECT_TRUE(used.insert(idx).second);
            EXPECT_TRUE(std::equal(s.parts[p].row(j).begin(), s.parts[p].row(j).end(),
                                   x.row(idx).begin()));
        }
    }
    EXPECT_EQ(split(x, {20, 10, 5}, 9).indices, s.indices);

    const auto two = split(VectorSet(2, 1, {1, 2}), {1, 1}, 0);
    EXPECT_NE(two.parts[0].row(0)[0], two.parts[1].row(0)[0]);
    EXPECT_THROW(split(x, {40, 11}, 0), ConfigError);
}

TEST(Kernels, PackedMatrixIsBatchInvariant) {
    Rng rng(3);
    const std::size_t in = 37, out = 70, n = 23;
    std::vector<float> w(in * out), x(n * in);
    for (auto& v : w) v = static_cast<float>(rng.normal());
    for (auto& v : x) v = static_cast<float>(rng.normal());
    PackedMatrix pm(in, out, w);
    std::vector<float> batch(n * out), single(out);
    pm.apply(x.data(), n, in, batch.data(), out);
    for (std::size_t r = 0; r < n; ++r) {
        pm.apply(x.data() + r * in, 1, in, single.data(), out);
        EXPECT_EQ(std::memcmp(single.data(), batch.data() + r * out, out * sizeof(float)), 0);
        for (std::size_t j = 0; j < out; ++j) {
            double ref = 0.0;
            for (std::size_t t = 0; t < in; ++t) {
                ref += static_cast<double>(x[r * in + t]) * w[t * out + j];
            }
            EXPECT_NEAR(single[j], ref, 1e-4);
        }
    }
}

TEST(Kernels, NearestRowsMatchesBruteForce) {
    const auto table = synth_gmm(2, 40, 7, 40, 0.0);
    const auto q = synth_gmm(9, 300, 7, 5, 1.0);
    const auto res = nearest_rows(q.data(), q.n(), table.data(), table.n(), table.d());
    for (std::size_t i = 0; i < q.n(); ++i) {
        std::size_t best = 0;
        double bd = 1e300;
        for (std::size_t k = 0; k < table.n(); ++k) {
            const double dd = squared_distance(q.row(i).data(), table.row(k).data(), 7);
            if (dd < bd) {
                bd = dd;
                best = k;
            }
        }
        EXPECT_EQ(res.index[i], best);
        EXPECT_EQ(res.distance[i], bd);
    }
}

TEST(Kernels, NearestRowsTiesToSmallerIndex) {
    VectorSet table(3, 1, {1.0F, -1.0F, 1.0F});
    VectorSet q(1, 1, {0.0F});
    EXPECT_EQ(nearest_rows(q.data(), 1, table.data(), 3, 1).index[0], 0U);
}
