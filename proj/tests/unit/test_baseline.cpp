#include <qinco/baseline/kmeans.hpp>
#include <qinco/baseline/pq.hpp>
#include <qinco/baseline/rq.hpp>
#include <qinco/data/dataset.hpp>
#include <qinco/util/kernels.hpp>
#include <qinco/util/random.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace qinco;

namespace {

double mse(const VectorSet& a, const VectorSet& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.n(); ++i) {
        s += squared_distance(a.row(i).data(), b.row(i).data(), a.d());
    }
    return s / static_cast<double>(a.n());
}

RqCodec random_codec(std::uint64_t seed, std::size_t m, std::size_t k, std::size_t d,
                     double scale = 1.0) {
    Rng rng(seed);
    RqCodec c;
    for (std::size_t s = 0; s < m; ++s) {
        Codebook cb(k, d);
        for (auto& v : cb.entries()) {
            v = static_cast<float>(scale * rng.normal());
        }
        c.codebooks.push_back(cb);
    }
    return c;
}

} // namespace

TEST(KMeans, ExactCover) {
    VectorSet x(4, 2, {0, 0, 1, 0, 0, 1, 5, 5});
    const auto r = kmeans(x, 4, 1, 3);
    EXPECT_EQ(r.final_mse(), 0.0);
}

TEST(KMeans, OneDimensionalTwoClusters) {
    // All 2-partitions of {0,1,10,11} by brute force; the best is {0,1},{10,11}.
    const std::vector<float> pts = {0, 1, 10, 11};
    double best = 1e30;
    for (int mask = 1; mask < 15; ++mask) {
        double sse = 0.0;
        for (int side = 0; side < 2; ++side) {
            double sum = 0.0, cnt = 0.0;
            for (int i = 0; i < 4; ++i) {
                if (((mask >> i) & 1) == side) {
                    sum += pts[i];
                    cnt += 1;
                }
            }
            for (int i = 0; i < 4; ++i) {
                if (((mask >> i) & 1) == side) {
                    sse += (pts[i] - sum / cnt) * (pts[i] - sum / cnt);
                }
            }
        }
        best = std::min(best, sse / 4.0);
    }
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const auto r = kmeans(VectorSet(4, 1, pts), 2, 10, seed);
        std::vector<float> c = r.centroids.entries();
        std::sort(c.begin(), c.end());
        EXPECT_EQ(c, (std::vector<float>{0.5F, 10.5F})) << "seed " << seed;
        EXPECT_DOUBLE_EQ(r.final_mse(), best);
        EXPECT_DOUBLE_EQ(r.final_mse(), 0.25);
    }
}

TEST(KMeans, ZeroItersKeepsSample) {
    const auto x = synth_gmm(1, 100, 3, 4, 1.0);
    const auto r = kmeans(x, 5, 0, 42);
    const auto idx = Rng(42).sample_distinct(100, 5);
    for (std::size_t c = 0; c < 5; ++c) {
        EXPECT_TRUE(std::equal(r.centroids.row(c).begin(), r.centroids.row(c).end(),
                               x.row(idx[c]).begin()));
    }
    EXPECT_EQ(r.objective.size(), 1U);
}

TEST(KMeans, TooManyClustersWarns) {
    const auto r = kmeans(VectorSet(3, 1, {1, 2, 3}), 5, 3, 0);
    EXPECT_EQ(r.centroids.k(), 3U);
    EXPECT_FALSE(r.warnings.empty());
}

TEST(KMeans, ObjectiveMonotone) {
    const auto x = synth_gmm(4, 3000, 8, 30, 0.4);
    const auto r = kmeans(x, 64, 20, 1);
    for (std::size_t t = 1; t < r.objective.size(); ++t) {
        const bool reseeded = std::any_of(r.reseeds.begin(), r.reseeds.end(),
                                          [&](const ReseedEvent& e) { return e.iteration == t; });
        if (!reseeded) {
            EXPECT_LE(r.objective[t], r.objective[t - 1] + 1e-9) << "iteration " << t;
        }
    }
}

TEST(KMeans, ReseedsEmptyClusters) {
    // Duplicated points force empty clusters after the first assignment.
    std::vector<float> v;
    for (int i = 0; i < 20; ++i) v.push_back(i < 15 ? 0.0F : static_cast<float>(i));
    const auto r = kmeans(VectorSet(20, 1, v), 6, 5, 0);
    EXPECT_EQ(r.centroids.k(), 6U);
    EXPECT_LE(r.final_mse(), 1e-12);
}

TEST(Rq, SingleStepIsKMeans) {
    const auto x = synth_gmm(2, 800, 4, 10, 0.2);
    const auto rq = rq_train(x, 1, 16, 10, 5);
    const auto km = kmeans(x, 16, 10, Rng::mix(5, 0));
    EXPECT_EQ(rq.codec.codebooks[0], km.centroids);
    EXPECT_DOUBLE_EQ(rq.step_mse[1], quantization_mse(x, km.centroids));
}

TEST(Rq, StepMseNonIncreasing) {
    const auto x = synth_gmm(7, 4000, 16, 64, 0.3);
    const auto rq = rq_train(x, 6, 32, 15, 7);
    ASSERT_EQ(rq.step_mse.size(), 7U);
    for (std::size_t m = 1; m < rq.step_mse.size(); ++m) {
        EXPECT_LE(rq.step_mse[m], rq.step_mse[m - 1] + 1e-9);
    }
}

TEST(Rq, PlantedCodebooksRecovered) {
    // Every sum of a coarse and a fine 4-entry codebook in 2-D, so the first
    // k-means step can separate the coarse entries.
    auto planted = random_codec(11, 2, 4, 2);
    for (auto& v : planted.codebooks[0].entries()) v *= 10.0F;
    std::vector<float> v;
    for (int rep = 0; rep < 50; ++rep) {
        for (code_t a = 0; a < 4; ++a) {
            for (code_t b = 0; b < 4; ++b) {
                v.push_back(planted.codebooks[0].row(a)[0] + planted.codebooks[1].row(b)[0]);
                v.push_back(planted.codebooks[0].row(a)[1] + planted.codebooks[1].row(b)[1]);
            }
        }
    }
    VectorSet x(v.size() / 2, 2, v);
    double best = 1e30;
    for (std::uint64_t seed = 0; seed < 20 && best >= 1e-6; ++seed) {
        const auto rq = rq_train(x, 2, 4, 25, seed);
        const auto enc = rq_encode(rq.codec, x, 16);
        best = std::min(best, mse(x, rq_decode(rq.codec, enc.codes)));
    }
    EXPECT_LT(best, 1e-6);
}

TEST(Rq, GreedyIsNearestRecurrence) {
    const auto x = synth_gmm(3, 500, 6, 8, 0.5);
    const auto codec = random_codec(5, 3, 16, 6, 0.5);
    const auto enc = rq_encode(codec, x, 1);
    for (std::size_t i = 0; i < x.n(); ++i) {
        std::vector<float> xh(6, 0.0F), tmp(6);
        for (std::size_t s = 0; s < 3; ++s) {
            double bd = 1e300;
            code_t bc = 0;
            for (code_t c = 0; c < 16; ++c) {
                for (std::size_t j = 0; j < 6; ++j) tmp[j] = xh[j] + codec.codebooks[s].row(c)[j];
                const double dd = squared_distance(x.row(i).data(), tmp.data(), 6);
                if (dd < bd) {
                    bd = dd;
                    bc = c;
                }
            }
            ASSERT_EQ(enc.codes(i, s), bc);
            for (std::size_t j = 0; j < 6; ++j) xh[j] += codec.codebooks[s].row(bc)[j];
        }
    }
}

TEST(Rq, FullBeamIsExhaustive) {
    const auto x = synth_gmm(8, 400, 3, 6, 0.7);
    const auto codec = random_codec(9, 2, 4, 3);
    const auto enc = rq_encode(codec, x, 16);
    std::vector<float> tmp(3);
    for (std::size_t i = 0; i < x.n(); ++i) {
        double bd = 1e300;
        code_t ba = 0, bb = 0;
        for (code_t a = 0; a < 4; ++a) {
            for (code_t b = 0; b < 4; ++b) {
                for (std::size_t j = 0; j < 3; ++j) {
                    tmp[j] = 0.0F + codec.codebooks[0].row(a)[j];
                    tmp[j] += codec.codebooks[1].row(b)[j];
                }
                const double dd = squared_distance(x.row(i).data(), tmp.data(), 3);
                if (dd < bd) {
                    bd = dd;
                    ba = a;
                    bb = b;
                }
            }
        }
        EXPECT_EQ(enc.codes(i, 0), ba);
        EXPECT_EQ(enc.codes(i, 1), bb);
        EXPECT_EQ(enc.losses[i], bd);
    }
}

TEST(Rq, BeamTieTakesSmallestTuple) {
    // Two identical codebook-1 entries make (0,*) and (1,*) tie.
    RqCodec c;
    c.codebooks.emplace_back(2, 1, std::vector<float>{1.0F, 1.0F});
    c.codebooks.emplace_back(2, 1, std::vector<float>{0.0F, 5.0F});
    const auto enc = rq_encode(c, VectorSet(1, 1, {1.0F}), 4);
    EXPECT_EQ(enc.codes(0, 0), 0U);
    EXPECT_EQ(enc.codes(0, 1), 0U);
}

TEST(Rq, BeamImprovesAggregate) {
    const auto x = synth_gmm(7, 3000, 16, 64, 0.2);
    const auto rq = rq_train(x, 4, 32, 10, 1);
    const auto g = rq_encode(rq.codec, x, 1);
    const auto b = rq_encode(rq.codec, x, 16);
    const double mg = mse(x, rq_decode(rq.codec, g.codes));
    const double mb = mse(x, rq_decode(rq.codec, b.codes));
    EXPECT_LE(mb, mg + 1e-9);
}

TEST(Rq, EncoderLossMatchesDecode) {
    const auto x = synth_gmm(7, 300, 5, 9, 0.4);
    const auto codec = random_codec(2, 3, 8, 5, 0.6);
    const auto enc = rq_encode(codec, x, 5);
    const auto rec = rq_decode(codec, enc.codes);
    for (std::size_t i = 0; i < x.n(); ++i) {
        EXPECT_EQ(enc.losses[i], squared_distance(x.row(i).data(), rec.row(i).data(), 5));
    }
}

TEST(Rq, DecodeBasics) {
    RqCodec zero;
    zero.codebooks.assign(2, Codebook(3, 4));
    CodeArray codes(5, 2, 3);
    EXPECT_EQ(rq_decode(zero, codes), VectorSet(5, 4));

    const auto c = random_codec(1, 1, 3, 2);
    CodeArray one(1, 1, 3, {2});
    const auto r = rq_decode(c, one);
    EXPECT_TRUE(std::equal(r.row(0).begin(), r.row(0).end(), c.codebooks[0].row(2).begin()));

    CodeArray bad(1, 1, 4, {3});
    EXPECT_THROW(rq_decode(c, bad), FormatError);
    EXPECT_EQ(rq_decode(c, one), rq_decode(c, one));
}

TEST(Rq, SerializationRoundtrip) {
    auto c = random_codec(4, 3, 5, 7);
    c.beam_default = 9;
    const auto bytes = serialize_rq(c);
    EXPECT_EQ(deserialize_rq(bytes), c);
    auto broken = bytes;
    broken.resize(broken.size() - 1);
    EXPECT_THROW(deserialize_rq(broken), FormatError);
    broken = bytes;
    broken[0] = 'X';
    EXPECT_THROW(deserialize_rq(broken), FormatError);
}

TEST(Pq, SingleSliceIsKMeans) {
    const auto x = synth_gmm(3, 400, 4, 6, 0.3);
    const auto pq = pq_train(x, 1, 8, 10, 2);
    const auto km = kmeans(x, 8, 10, Rng::mix(2, 0));
    EXPECT_EQ(pq.codebooks[0], km.centroids);
    EXPECT_EQ(pq.sub_dims, (std::vector<std::size_t>{4}));
}

TEST(Pq, DistinctPointsExact) {
    const auto x = synth_gmm(6, 8, 5, 8, 1.0);
    const auto pq = pq_train(x, 2, 8, 5, 0);
    EXPECT_EQ(pq.sub_dims, (std::vector<std::size_t>{3, 2}));
    EXPECT_EQ(mse(x, pq_decode(pq, pq_encode(pq, x))), 0.0);
    EXPECT_THROW(pq_encode(pq, VectorSet(2, 4)), ConfigError);
}

TEST(Pq, NoBetterThanJointCodebook) {
    // The PQ product codebook is one feasible 4-entry joint codebook; Lloyd
    // steps from it on the joint space can only lower the error.
    const auto x = synth_gmm(13, 32, 2, 5, 0.6);
    const auto pq = pq_train(x, 2, 2, 20, 3);
    const double pq_mse = mse(x, pq_decode(pq, pq_encode(pq, x)));

    VectorSet joint(4, 2);
    for (code_t a = 0; a < 2; ++a) {
        for (code_t b = 0; b < 2; ++b) {
            joint.row(a * 2 + b)[0] = pq.codebooks[0].row(a)[0];
            joint.row(a * 2 + b)[1] = pq.codebooks[1].row(b)[0];
        }
    }
    EXPECT_NEAR(quantization_mse(x, Codebook(joint)), pq_mse, 1e-12);
    double prev = pq_mse;
    for (int it = 0; it < 10; ++it) {
        const auto nn = nearest_rows(x.data(), x.n(), joint.data(), 4, 2);
        std::vector<double> sum(8, 0.0), cnt(4, 0.0);
        for (std::size_t i = 0; i < x.n(); ++i) {
            sum[nn.index[i] * 2] += x.row(i)[0];
            sum[nn.index[i] * 2 + 1] += x.row(i)[1];
            cnt[nn.index[i]] += 1;
        }
        for (std::size_t c = 0; c < 4; ++c) {
            if (cnt[c] > 0) {
                joint.row(c)[0] = static_cast<float>(sum[c * 2] / cnt[c]);
                joint.row(c)[1] = static_cast<float>(sum[c * 2 + 1] / cnt[c]);
            }
        }
        const double now = quantization_mse(x, Codebook(joint));
        EXPECT_LE(now, prev + 1e-9);
        prev = now;
    }
    EXPECT_GE(pq_mse, prev - 1e-9);
}
