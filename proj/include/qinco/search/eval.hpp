#pragma once

#include <qinco/baseline/rq.hpp>
#include <qinco/model/inference.hpp>
#include <qinco/search/index.hpp>

#include <vector>

namespace qinco {

struct RecallReport {
    std::vector<std::size_t> ranks;
    /// recall[i] is R@ranks[i].
    std::vector<double> recall;
    std::size_t queries = 0;
    StageTimes seconds;
    double wall_seconds = 0.0;
    double qps = 0.0;

    double at(std::size_t rank) const;
};

/// R@r: fraction of queries whose ground-truth nearest neighbour (first id
/// of its row) is among the first r results.
RecallReport eval_recall(const SearchResults& results, const IdTable& groundtruth,
                         const std::vector<std::size_t>& ranks = {1, 10, 100});

/// Mean ||x - x-hat||^2 with 64-bit accumulation.
double eval_mse(const VectorSet& x, const VectorSet& xhat);
double eval_mse(const CompiledModel& model, const VectorSet& x, std::size_t a, std::size_t b);
double eval_mse(const RqCodec& codec, const VectorSet& x, std::size_t beam);

/// Exact k nearest database ids per query, ties to the smaller id.
IdTable compute_groundtruth(const VectorSet& db, const VectorSet& queries, std::size_t k);

} // namespace qinco
