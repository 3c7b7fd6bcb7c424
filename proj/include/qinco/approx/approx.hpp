#pragma once

#include <qinco/baseline/rq.hpp>

#include <filesystem>
#include <utility>
#include <vector>

namespace qinco {

/// Combined code of a pair: ci * k + cj.
inline std::uint32_t pair_index(code_t ci, code_t cj, std::size_t k) {
    QINCO_CHECK(ci < k && cj < k, "pair_index: code out of range");
    return static_cast<std::uint32_t>(ci * k + cj);
}

/// Additive decoder over fixed codes: x-hat = sum_m C_m[code_m].
struct AqDecoder {
    std::vector<Codebook> codebooks;

    std::size_t m() const { return codebooks.size(); }
    std::size_t k() const { return codebooks.empty() ? 0 : codebooks.front().k(); }
    std::size_t d() const { return codebooks.empty() ? 0 : codebooks.front().d(); }
    friend bool operator==(const AqDecoder&, const AqDecoder&) = default;
};

/// Sum of entries accumulated in float, left to right. Uses the first m()
/// columns of `codes`.
VectorSet aq_decode(const AqDecoder& dec, const CodeArray& codes);

/// Joint least squares over all M*K codebook rows: normal equations of the
/// one-hot design with `ridge` added to the diagonal. ridge < 0 selects the
/// default 1e-6 * n. With ridge == 0 a singular system throws ConfigError.
AqDecoder fit_aq_ls(const CodeArray& codes, const VectorSet& x, double ridge = -1.0);

/// Sequential refit: codebook m is the per-code mean of the residuals left by
/// codebooks 1..m-1. `step_mse`, when given, receives the residual MSE before
/// any step followed by the value after each step.
AqDecoder fit_rq_refit(const CodeArray& codes, const VectorSet& x,
                       std::vector<double>* step_mse = nullptr);

using CodePair = std::pair<std::uint32_t, std::uint32_t>;

/// Decoder over pairs of code positions. Codebook s has k rows when
/// pairs[s] is (i, i) and k*k rows otherwise; a never-seen cell is a zero
/// row with seen[s][cell] == 0.
struct PairwiseDecoder {
    std::size_t k = 0;
    std::size_t d = 0;
    std::vector<CodePair> pairs;
    std::vector<Codebook> codebooks;
    std::vector<std::vector<std::uint8_t>> seen;
    /// Residual MSE on the fitting set, before any step then after each.
    std::vector<double> step_mse;
    /// Greedy selection only: predicted MSE reduction of each chosen pair.
    std::vector<double> predicted_gain;

    std::size_t steps() const { return pairs.size(); }
    /// Row of codebook s addressed by a code row.
    std::size_t cell(std::size_t s, std::span<const code_t> codes) const {
        const auto [i, j] = pairs[s];
        return i == j ? codes[i] : pair_index(codes[i], codes[j], k);
    }
    friend bool operator==(const PairwiseDecoder&, const PairwiseDecoder&) = default;
};

/// Greedy selection of `m_prime` pairs: each step fits every candidate pair
/// (i <= j) by per-cell means of the current residuals and keeps the one with
/// the largest SSE reduction sum_v n_v ||mean_v||^2 (ties: smallest pair).
/// `shrink` > 0 replaces cell means by sum_v / (n_v + shrink), which damps
/// sparsely populated cells; every step still lowers the training SSE.
PairwiseDecoder select_pairs_greedy(const CodeArray& codes, const VectorSet& x,
                                    std::size_t m_prime, double shrink = 0.0);

enum class PairFit {
    /// Per-cell means of the residuals, one pair after the other.
    sequential,
    /// Ridge least squares over all cells at once (small k only).
    joint,
    /// Starts from the sequential unitary refit of the positions in pair
    /// order (cell (a, b) = f_i[a] + f_j[b]), then cycles exact per-pair
    /// refits on the partial residuals. The SSE never increases, so the
    /// result is never worse than the unitary refit. Cells never seen keep
    /// their additive initialization.
    backfit,
};

/// Fits a fixed pair list. `sweeps` bounds the backfitting cycles.
PairwiseDecoder fit_pairs_fixed(const CodeArray& codes, const VectorSet& x,
                                const std::vector<CodePair>& pairs,
                                PairFit mode = PairFit::sequential, double ridge = -1.0,
                                std::size_t sweeps = 10);

/// (0,1), (2,3), ... over the first `m` positions; an odd m ends with (m-1, m-1).
std::vector<CodePair> consecutive_pairs(std::size_t m);

/// Counts decoder lookups that hit never-seen cells.
struct UnseenCounter {
    std::size_t count = 0;
};

void pairwise_decode_row(const PairwiseDecoder& dec, std::span<const code_t> codes, float* out,
                         UnseenCounter* unseen = nullptr);
VectorSet pairwise_decode(const PairwiseDecoder& dec, const CodeArray& codes,
                          UnseenCounter* unseen = nullptr);

/// IVF centroids quantized with an RQ of m_tilde steps; table row b holds the
/// codes of centroid b.
struct IvfCentroidCodes {
    RqCodec codec;
    CodeArray table;
    /// Mean over centroids of ||c-hat - c||^2 / ||c||^2.
    double relative_mse = 0.0;

    std::size_t m_tilde() const { return codec.m(); }
    friend bool operator==(const IvfCentroidCodes&, const IvfCentroidCodes&) = default;
};

/// Greedy RQ on the centroids starting at `m_tilde` steps and growing up to
/// `max_steps` until the relative MSE falls below `target`. With at most k
/// centroids the centroids themselves form a one-step exact codebook.
IvfCentroidCodes quantize_ivf_centroids(const Codebook& centroids, std::size_t m_tilde,
                                        std::size_t k, double target = 1e-3,
                                        std::uint64_t seed = 0, std::size_t max_steps = 16,
                                        std::size_t kmeans_iters = 25);

/// Appends the centroid codes of each vector's bucket to its codes.
CodeArray extend_codes(const CodeArray& codes, std::span<const code_t> buckets,
                       const IvfCentroidCodes& ivf);

std::vector<std::uint8_t> serialize_aq(const AqDecoder& dec);
AqDecoder deserialize_aq(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_pairwise(const PairwiseDecoder& dec);
PairwiseDecoder deserialize_pairwise(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_ivf_codes(const IvfCentroidCodes& ivf);
IvfCentroidCodes deserialize_ivf_codes(std::span<const std::uint8_t> bytes);

} // namespace qinco
