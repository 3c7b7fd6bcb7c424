#include <qinco/search/eval.hpp>

#include <qinco/util/kernels.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace qinco {

double RecallReport::at(std::size_t rank) const {
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        if (ranks[i] == rank) return recall[i];
    }
    throw ConfigError("recall at rank " + std::to_string(rank) + " was not evaluated");
}

RecallReport eval_recall(const SearchResults& results, const IdTable& groundtruth,
                         const std::vector<std::size_t>& ranks) {
    const std::size_t nq = results.topk ? results.neighbors.size() / results.topk : 0;
    QINCO_CHECK(groundtruth.n == nq, "groundtruth has " + std::to_string(groundtruth.n) +
                                         " rows for " + std::to_string(nq) + " queries");
    QINCO_CHECK(nq == 0 || groundtruth.k >= 1, "groundtruth rows are empty");
    RecallReport rep;
    rep.ranks = ranks;
    rep.recall.assign(ranks.size(), 0.0);
    rep.queries = nq;
    rep.seconds = results.seconds;
    rep.wall_seconds = results.wall_seconds;
    rep.qps = results.wall_seconds > 0.0 ? static_cast<double>(nq) / results.wall_seconds : 0.0;
    std::vector<std::size_t> hits(ranks.size(), 0);
    for (std::size_t q = 0; q < nq; ++q) {
        const std::int64_t target = groundtruth.row(q)[0];
        const auto row = results.row(q);
        std::size_t first = row.size();
        for (std::size_t r = 0; r < row.size(); ++r) {
            if (row[r].id == target) {
                first = r;
                break;
            }
        }
        for (std::size_t i = 0; i < ranks.size(); ++i) {
            if (first < ranks[i]) ++hits[i];
        }
    }
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        rep.recall[i] = nq ? static_cast<double>(hits[i]) / static_cast<double>(nq) : 0.0;
    }
    return rep;
}

double eval_mse(const VectorSet& x, const VectorSet& xhat) {
    QINCO_CHECK(x.n() == xhat.n() && x.d() == xhat.d(), "reconstruction shape mismatch");
    if (x.n() == 0) return 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < x.n(); ++i) {
        total += squared_distance(x.row(i).data(), xhat.row(i).data(), x.d());
    }
    return total / static_cast<double>(x.n());
}

double eval_mse(const CompiledModel& model, const VectorSet& x, std::size_t a, std::size_t b) {
    const auto enc = encode_beam(model, x, a, b);
    if (model.ivf_centroids()) {
        return eval_mse(x, decode(model, with_bucket_column(enc.codes, enc.buckets,
                                                            model.ivf_centroids()->k())));
    }
    return eval_mse(x, decode(model, enc.codes));
}

double eval_mse(const RqCodec& codec, const VectorSet& x, std::size_t beam) {
    return eval_mse(x, rq_decode(codec, rq_encode(codec, x, beam).codes));
}

IdTable compute_groundtruth(const VectorSet& db, const VectorSet& queries, std::size_t k) {
    QINCO_CHECK(k >= 1 && k <= db.n(), "k must be in [1, n_db]");
    QINCO_CHECK(queries.n() == 0 || queries.d() == db.d(), "query dimension mismatch");
    QINCO_CHECK(db.n() <= static_cast<std::size_t>(std::numeric_limits<std::int32_t>::max()),
                "database too large for 32-bit ids");
    const std::size_t n = db.n(), d = db.d(), nq = queries.n();
    IdTable out{nq, k, std::vector<std::int32_t>(nq * k)};
    if (nq == 0) return out;

    using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMat> xb(db.row(0).data(), static_cast<Eigen::Index>(n),
                                      static_cast<Eigen::Index>(d));
    std::vector<float> dbn(n);
    double max_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dbn[i] = static_cast<float>(squared_norm(db.row(i).data(), d));
        max_norm = std::max(max_norm, static_cast<double>(dbn[i]));
    }

    // Float GEMM screening; every candidate within the float error bound of
    // the k-th estimate is re-ranked with exact double distances.
    constexpr std::size_t kBlock = 64;
    const auto nblocks = static_cast<std::int64_t>((nq + kBlock - 1) / kBlock);
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t bi = 0; bi < nblocks; ++bi) {
        const std::size_t q0 = static_cast<std::size_t>(bi) * kBlock;
        const std::size_t bq = std::min(kBlock, nq - q0);
        const Eigen::Map<const RowMat> xq(queries.row(q0).data(), static_cast<Eigen::Index>(bq),
                                          static_cast<Eigen::Index>(d));
        const RowMat ip = xq * xb.transpose();
        std::vector<float> est(n);
        std::vector<std::pair<double, std::int32_t>> cand;
        for (std::size_t r = 0; r < bq; ++r) {
            const float* q = queries.row(q0 + r).data();
            const double qn = squared_norm(q, d);
            for (std::size_t i = 0; i < n; ++i) {
                est[i] = dbn[i] - 2.0F * ip(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i));
            }
            std::vector<float> sorted = est;
            std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1),
                             sorted.end());
            const double tol = 1e-4 * (qn + max_norm) + 1e-6;
            const double limit = static_cast<double>(sorted[k - 1]) + tol;
            cand.clear();
            for (std::size_t i = 0; i < n; ++i) {
                if (est[i] <= limit) {
                    cand.emplace_back(squared_distance(q, db.row(i).data(), d),
                                      static_cast<std::int32_t>(i));
                }
            }
            std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k),
                              cand.end());
            for (std::size_t j = 0; j < k; ++j) {
                out.ids[(q0 + r) * k + j] = cand[j].second;
            }
        }
    }
    return out;
}

} // namespace qinco
