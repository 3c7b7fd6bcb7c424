#include <qinco/approx/approx.hpp>
#include <qinco/data/dataset.hpp>
#include <qinco/util/kernels.hpp>
#include <qinco/util/random.hpp>

#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <cmath>
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

CodeArray random_codes(std::uint64_t seed, std::size_t n, std::size_t m, std::size_t k) {
    Rng rng(seed);
    CodeArray c(n, m, k);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) c(i, j) = static_cast<code_t>(rng.below(k));
    }
    return c;
}

AqDecoder random_aq(std::uint64_t seed, std::size_t m, std::size_t k, std::size_t d) {
    Rng rng(seed);
    AqDecoder dec;
    for (std::size_t s = 0; s < m; ++s) {
        Codebook cb(k, d);
        for (auto& v : cb.entries()) v = static_cast<float>(rng.normal());
        dec.codebooks.push_back(cb);
    }
    return dec;
}

// x = planted additive reconstruction + small noise.
VectorSet planted(const AqDecoder& dec, const CodeArray& codes, double noise, std::uint64_t seed) {
    auto x = aq_decode(dec, codes);
    Rng rng(seed);
    VectorSet out(x.n(), x.d());
    for (std::size_t i = 0; i < x.n(); ++i) {
        for (std::size_t j = 0; j < x.d(); ++j) {
            out.row(i)[j] = x.row(i)[j] + static_cast<float>(noise * rng.normal());
        }
    }
    return out;
}

} // namespace

TEST(PairIndex, Examples) {
    EXPECT_EQ(pair_index(0, 0, 256), 0U);
    EXPECT_EQ(pair_index(1, 2, 256), 258U);
    EXPECT_EQ(pair_index(255, 255, 256), 65535U);
    EXPECT_THROW(pair_index(256, 0, 256), ConfigError);
}

TEST(PairIndex, Bijection) {
    std::set<std::uint32_t> seen;
    for (code_t a = 0; a < 7; ++a) {
        for (code_t b = 0; b < 7; ++b) {
            const auto v = pair_index(a, b, 7);
            EXPECT_LT(v, 49U);
            EXPECT_EQ(v / 7, a);
            EXPECT_EQ(v % 7, b);
            seen.insert(v);
        }
    }
    EXPECT_EQ(seen.size(), 49U);
}

TEST(AqLs, PlantedModelIsRecovered) {
    const auto gen = random_aq(1, 3, 6, 4);
    const auto codes = random_codes(2, 2000, 3, 6);
    const auto x = aq_decode(gen, codes);
    const auto fit = fit_aq_ls(codes, x);
    EXPECT_LT(mse(aq_decode(fit, codes), x), 1e-8);
}

TEST(AqLs, SingleCodebookIsGroupMeans) {
    const auto codes = random_codes(3, 400, 1, 5);
    const auto x = synth_gmm(4, 400, 3, 10, 0.5);
    const auto fit = fit_aq_ls(codes, x, 0.0);
    for (code_t c = 0; c < 5; ++c) {
        std::vector<double> mean(3, 0.0);
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < 400; ++i) {
            if (codes(i, 0) != c) continue;
            ++cnt;
            for (std::size_t j = 0; j < 3; ++j) mean[j] += x.row(i)[j];
        }
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_NEAR(fit.codebooks[0].row(c)[j], mean[j] / cnt, 1e-5);
        }
    }
}

TEST(AqLs, NoWorseThanGeneratingCodebooks) {
    const auto gen = random_aq(5, 3, 8, 5);
    const auto codes = random_codes(6, 1500, 3, 8);
    const auto x = planted(gen, codes, 0.5, 7);
    const auto fit = fit_aq_ls(codes, x);
    EXPECT_LE(mse(aq_decode(fit, codes), x), mse(aq_decode(gen, codes), x) + 1e-9);
}

TEST(AqLs, SingularWithoutRidgeThrows) {
    // Two codebooks always share a constant offset, so the Gram matrix is singular.
    const auto codes = random_codes(8, 100, 2, 3);
    const auto x = synth_gmm(9, 100, 2, 4, 0.5);
    EXPECT_THROW(fit_aq_ls(codes, x, 0.0), ConfigError);
    EXPECT_NO_THROW(fit_aq_ls(codes, x, 1e-3));
}

TEST(AqLs, MatchesDenseLeastSquaresOracle) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const std::size_t n = 64, m = 2, k = 4, d = 4;
        const auto codes = random_codes(10 + seed, n, m, k);
        const auto x = synth_gmm(20 + seed, n, d, 6, 0.7);
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, m * k), y(n, d);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t s = 0; s < m; ++s) a(i, s * k + codes(i, s)) = 1.0;
            for (std::size_t j = 0; j < d; ++j) y(i, j) = x.row(i)[j];
        }
        const Eigen::MatrixXd w = a.completeOrthogonalDecomposition().solve(y);
        const Eigen::MatrixXd ref = a * w;
        const auto got = aq_decode(fit_aq_ls(codes, x, 1e-9), codes);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                EXPECT_NEAR(got.row(i)[j], ref(i, j), 1e-5 * std::max(1.0, std::abs(ref(i, j))));
            }
        }
    }
}

TEST(RqRefit, SingleStepMatchesLeastSquares) {
    const auto codes = random_codes(11, 300, 1, 6);
    const auto x = synth_gmm(12, 300, 4, 8, 0.5);
    const auto a = fit_rq_refit(codes, x);
    const auto b = fit_aq_ls(codes, x, 0.0);
    for (std::size_t i = 0; i < a.codebooks[0].entries().size(); ++i) {
        EXPECT_NEAR(a.codebooks[0].entries()[i], b.codebooks[0].entries()[i], 1e-5);
    }
}

TEST(RqRefit, StepMseNonIncreasingAndJointIsBetter) {
    const auto gen = random_aq(13, 4, 8, 6);
    const auto codes = random_codes(14, 2000, 4, 8);
    const auto x = planted(gen, codes, 0.3, 15);
    std::vector<double> steps;
    const auto seq = fit_rq_refit(codes, x, &steps);
    ASSERT_EQ(steps.size(), 5U);
    for (std::size_t s = 1; s < steps.size(); ++s) EXPECT_LE(steps[s], steps[s - 1] + 1e-9);
    EXPECT_NEAR(steps.back(), mse(aq_decode(seq, codes), x), 1e-6 * steps.back());
    EXPECT_GE(mse(aq_decode(seq, codes), x) + 1e-9, mse(aq_decode(fit_aq_ls(codes, x), codes), x));
}

TEST(Greedy, PlantedPairIsFoundFirst) {
    // Three positions; the data depends on a non-additive function of codes 0
    // and 1 only, so the single best pair is (0, 1).
    const std::size_t k = 4, n = 3000, d = 3;
    const auto codes = random_codes(16, n, 3, k);
    Rng rng(17);
    std::vector<float> table(k * k * d);
    for (auto& v : table) v = static_cast<float>(rng.normal());
    VectorSet x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto c = pair_index(codes(i, 0), codes(i, 1), k);
        for (std::size_t j = 0; j < d; ++j) x.row(i)[j] = table[c * d + j];
    }
    const auto dec = select_pairs_greedy(codes, x, 2);
    EXPECT_EQ(dec.pairs[0], (CodePair{0, 1}));
    EXPECT_LT(dec.step_mse[1], 1e-8);
    EXPECT_LT(mse(pairwise_decode(dec, codes), x), 1e-8);
}

TEST(Greedy, AdditivePlantedDataIsExactAfterOnePair) {
    const auto gen = random_aq(18, 2, 5, 4);
    const auto codes = random_codes(19, 2000, 2, 5);
    const auto x = aq_decode(gen, codes);
    const auto dec = select_pairs_greedy(codes, x, 1);
    EXPECT_EQ(dec.pairs[0], (CodePair{0, 1}));
    EXPECT_LT(dec.step_mse[1], 1e-8);
}

TEST(Greedy, StepMseMonotoneAndMatchesPredictedGain) {
    const auto gen = random_aq(20, 4, 6, 5);
    const auto codes = random_codes(21, 1500, 4, 6);
    const auto x = planted(gen, codes, 0.5, 22);
    const auto dec = select_pairs_greedy(codes, x, 8);
    ASSERT_EQ(dec.step_mse.size(), 9U);
    for (std::size_t s = 1; s < dec.step_mse.size(); ++s) {
        EXPECT_LE(dec.step_mse[s], dec.step_mse[s - 1] + 1e-9);
        const double actual = dec.step_mse[s - 1] - dec.step_mse[s];
        EXPECT_NEAR(actual, dec.predicted_gain[s - 1],
                    1e-6 * std::max(dec.predicted_gain[s - 1], dec.step_mse[s - 1] * 1e-3));
    }
    // Decoding sums float entries; step_mse tracks double residuals.
    EXPECT_NEAR(mse(pairwise_decode(dec, codes), x), dec.step_mse.back(), 1e-7 * dec.step_mse.back());
}

TEST(Greedy, ShrinkageScalesCellMeansAndKeepsGainAccounting) {
    const auto gen = random_aq(23, 3, 5, 4);
    const auto codes = random_codes(24, 600, 3, 5);
    const auto x = planted(gen, codes, 0.5, 25);
    const double shrink = 6.0;
    const auto plain = select_pairs_greedy(codes, x, 1);
    const auto damped = select_pairs_greedy(codes, x, 4, shrink);
    if (damped.pairs[0] == plain.pairs[0]) {
        std::vector<std::size_t> count(plain.codebooks[0].k(), 0);
        for (std::size_t i = 0; i < codes.n(); ++i) ++count[plain.cell(0, codes.row(i))];
        for (std::size_t c = 0; c < count.size(); ++c) {
            const double scale = count[c] / (count[c] + shrink);
            for (std::size_t j = 0; j < 4; ++j) {
                EXPECT_NEAR(damped.codebooks[0].row(c)[j], scale * plain.codebooks[0].row(c)[j],
                            1e-5);
            }
        }
    }
    for (std::size_t s = 1; s < damped.step_mse.size(); ++s) {
        EXPECT_LE(damped.step_mse[s], damped.step_mse[s - 1] + 1e-9);
        EXPECT_NEAR(damped.step_mse[s - 1] - damped.step_mse[s], damped.predicted_gain[s - 1],
                    1e-6 * damped.step_mse[s - 1]);
    }
    EXPECT_THROW(select_pairs_greedy(codes, x, 1, -1.0), ConfigError);
}

TEST(Greedy, RejectsZeroSteps) {
    const auto codes = random_codes(1, 10, 2, 3);
    EXPECT_THROW(select_pairs_greedy(codes, synth_gmm(1, 10, 2, 2, 0.1), 0), ConfigError);
}

TEST(FixedPairs, SelfPairIsUnitaryRefit) {
    const auto codes = random_codes(23, 500, 2, 6);
    const auto x = synth_gmm(24, 500, 4, 8, 0.5);
    const auto pw = fit_pairs_fixed(codes, x, {{0, 0}});
    const auto rq = fit_rq_refit(codes.truncate(1), x);
    EXPECT_EQ(pw.codebooks[0], rq.codebooks[0]);
}

TEST(FixedPairs, JointNoWorseThanSequential) {
    const auto gen = random_aq(25, 4, 4, 3);
    const auto codes = random_codes(26, 1000, 4, 4);
    const auto x = planted(gen, codes, 0.8, 27);
    const auto pairs = consecutive_pairs(4);
    const auto seq = fit_pairs_fixed(codes, x, pairs, PairFit::sequential);
    const auto joint = fit_pairs_fixed(codes, x, pairs, PairFit::joint);
    EXPECT_LE(mse(pairwise_decode(joint, codes), x), mse(pairwise_decode(seq, codes), x) + 1e-9);
}

TEST(FixedPairs, BackfitNoWorseThanUnitaryFits) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto codes = random_codes(30 + seed, 3000, 6, 8);
        const auto x = synth_gmm(40 + seed, 3000, 5, 32, 0.3);
        std::vector<double> steps;
        const auto unit = fit_rq_refit(codes, x, &steps);
        const auto ls = fit_aq_ls(codes, x);
        const auto bf = fit_pairs_fixed(codes, x, consecutive_pairs(6), PairFit::backfit);
        const double m_bf = mse(pairwise_decode(bf, codes), x);
        EXPECT_LE(m_bf, mse(aq_decode(unit, codes), x) + 1e-9);
        EXPECT_LE(m_bf, mse(aq_decode(ls, codes), x) + 1e-9);
        EXPECT_NEAR(m_bf, bf.step_mse.back(), 1e-7 * m_bf);
    }
}

TEST(FixedPairs, UnseenCellsAreZeroAndCounted) {
    CodeArray codes(4, 2, 3, {0, 0, 0, 1, 1, 0, 1, 1});
    const VectorSet x(4, 1, {1, 2, 3, 4});
    const auto dec = fit_pairs_fixed(codes, x, {{0, 1}});
    ASSERT_EQ(dec.codebooks[0].k(), 9U);
    EXPECT_EQ(dec.codebooks[0].row(pair_index(2, 2, 3))[0], 0.0F);
    EXPECT_EQ(dec.seen[0][pair_index(2, 2, 3)], 0);
    UnseenCounter unseen;
    pairwise_decode(dec, codes, &unseen);
    EXPECT_EQ(unseen.count, 0U);
    pairwise_decode(dec, CodeArray(1, 2, 3, {2, 2}), &unseen);
    EXPECT_EQ(unseen.count, 1U);
}

TEST(FixedPairs, NormalizesPairOrder) {
    const auto codes = random_codes(50, 200, 3, 3);
    const auto x = synth_gmm(51, 200, 2, 4, 0.5);
    EXPECT_EQ(fit_pairs_fixed(codes, x, {{2, 0}}).pairs[0], (CodePair{0, 2}));
}

TEST(ConsecutivePairs, Layout) {
    EXPECT_EQ(consecutive_pairs(4), (std::vector<CodePair>{{0, 1}, {2, 3}}));
    EXPECT_EQ(consecutive_pairs(3), (std::vector<CodePair>{{0, 1}, {2, 2}}));
}

TEST(PairwiseDecode, EmptyDecoderGivesZero) {
    PairwiseDecoder dec;
    dec.k = 4;
    dec.d = 3;
    const auto out = pairwise_decode(dec, random_codes(1, 5, 2, 4));
    for (float v : out.values()) EXPECT_EQ(v, 0.0F);
}

TEST(PairwiseDecode, EqualsExplicitSum) {
    PairwiseDecoder dec;
    dec.k = 3;
    dec.d = 2;
    dec.pairs = {{0, 1}, {1, 1}, {0, 2}};
    Rng rng(60);
    for (const auto& p : dec.pairs) {
        const std::size_t cells = p.first == p.second ? 3 : 9;
        Codebook cb(cells, 2);
        for (auto& v : cb.entries()) v = static_cast<float>(rng.normal());
        dec.codebooks.push_back(cb);
        dec.seen.emplace_back(cells, 1);
    }
    const auto codes = random_codes(61, 20, 3, 3);
    const auto out = pairwise_decode(dec, codes);
    for (std::size_t i = 0; i < 20; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            float ref = 0.0F;
            ref += dec.codebooks[0].row(codes(i, 0) * 3 + codes(i, 1))[j];
            ref += dec.codebooks[1].row(codes(i, 1))[j];
            ref += dec.codebooks[2].row(codes(i, 0) * 3 + codes(i, 2))[j];
            EXPECT_EQ(out.row(i)[j], ref);
        }
    }
}

TEST(IvfCodes, FewCentroidsAreExact) {
    const auto cents = Codebook(synth_gmm(70, 10, 4, 10, 0.0));
    const auto ivf = quantize_ivf_centroids(cents, 1, 16);
    EXPECT_EQ(ivf.m_tilde(), 1U);
    EXPECT_EQ(ivf.relative_mse, 0.0);
    for (std::size_t b = 0; b < 10; ++b) EXPECT_EQ(ivf.table(b, 0), b);
}

TEST(IvfCodes, MseDecreasesWithSteps) {
    const auto cents = Codebook(synth_gmm(71, 200, 6, 200, 0.0));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t m = 1; m <= 4; ++m) {
        // target 0 forces exactly m steps.
        const auto ivf = quantize_ivf_centroids(cents, m, 8, 0.0, 3, m);
        EXPECT_EQ(ivf.m_tilde(), m);
        EXPECT_LT(ivf.relative_mse, prev);
        prev = ivf.relative_mse;
    }
}

TEST(IvfCodes, GrowsUntilTarget) {
    const auto cents = Codebook(synth_gmm(72, 100, 4, 100, 0.0));
    const auto ivf = quantize_ivf_centroids(cents, 1, 16, 1e-3, 5);
    EXPECT_TRUE(ivf.relative_mse < 1e-3 || ivf.m_tilde() == 16);
    EXPECT_GT(ivf.m_tilde(), 1U);
}

TEST(IvfCodes, ExtendAppendsBucketRow) {
    const auto cents = Codebook(synth_gmm(73, 6, 3, 6, 0.0));
    const auto ivf = quantize_ivf_centroids(cents, 1, 8);
    const CodeArray codes(2, 2, 8, {1, 2, 3, 4});
    const std::vector<code_t> buckets{5, 0};
    const auto ext = extend_codes(codes, buckets, ivf);
    EXPECT_EQ(ext.m(), 3U);
    EXPECT_EQ(ext(0, 2), ivf.table(5, 0));
    EXPECT_EQ(ext(1, 2), ivf.table(0, 0));
    EXPECT_EQ(ext(1, 1), 4U);
}

TEST(ApproxSerialization, RoundTrips) {
    const auto codes = random_codes(80, 300, 3, 4);
    const auto x = synth_gmm(81, 300, 3, 8, 0.5);
    const auto aq = fit_aq_ls(codes, x);
    EXPECT_EQ(deserialize_aq(serialize_aq(aq)), aq);
    const auto pw = select_pairs_greedy(codes, x, 3);
    EXPECT_EQ(deserialize_pairwise(serialize_pairwise(pw)), pw);
    const auto ivf = quantize_ivf_centroids(Codebook(synth_gmm(82, 40, 3, 40, 0.0)), 1, 8, 1e-2);
    EXPECT_EQ(deserialize_ivf_codes(serialize_ivf_codes(ivf)), ivf);
    auto bytes = serialize_pairwise(pw);
    bytes.pop_back();
    EXPECT_THROW(deserialize_pairwise(bytes), FormatError);
}
