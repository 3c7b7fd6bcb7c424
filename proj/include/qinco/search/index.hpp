#pragma once

#include <qinco/approx/approx.hpp>
#include <qinco/model/inference.hpp>

#include <filesystem>
#include <unordered_set>

namespace qinco {

/// k-means coarse quantizer (sample init, `iters` Lloyd iterations).
Codebook build_ivf(const VectorSet& train, std::size_t k_ivf, std::uint64_t seed,
                   std::size_t iters = 25);

struct SearchParams {
    std::size_t n_probe = 1;
    std::size_t n_short_aq = 100;
    std::size_t n_short_pairs = 10;
    std::size_t topk = 10;
    /// AQ-only ablation: stage 3 reranks the first n_short_pairs of S_AQ.
    bool skip_pairwise = false;

    void validate(std::size_t k_ivf) const;
};

struct Neighbor {
    std::int64_t id = -1;
    double distance = 0.0;
    friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

struct StageTimes {
    double probe = 0.0;
    double aq = 0.0;
    double pairwise = 0.0;
    double decode = 0.0;
    StageTimes& operator+=(const StageTimes& o);
};

struct QueryStats {
    StageTimes seconds;
    /// Candidate ids entering each stage, in ranking order of the previous one.
    std::vector<std::int64_t> aq_shortlist;
    std::vector<std::int64_t> pair_shortlist;
    std::size_t scanned = 0;
    std::size_t unseen_cells = 0;
};

struct IndexOptions {
    /// Pairwise decoder steps; 0 means 2 * M.
    std::size_t m_prime = 0;
    /// Initial RQ steps for the centroid codes; grown up to 16 until the
    /// relative error is below ivf_target.
    std::size_t m_tilde = 1;
    double ivf_target = 1e-3;
    double aq_ridge = -1.0;
    /// Shrinkage of the pairwise cell means; negative picks it on held-out
    /// training rows.
    double pair_shrink = -1.0;
    /// Store ||x-hat_AQ||^2 as 8-bit values over the training range.
    bool quantize_norms = false;
    /// Encoder settings; 0 takes the model's evaluation values.
    std::size_t a = 0;
    std::size_t b = 0;
    std::uint64_t seed = 0;
};

/// Inverted file over QINCo2 codes with AQ and pairwise shortlist decoders.
class IvfIndex {
public:
    struct Bucket {
        std::vector<std::int64_t> ids;
        std::vector<code_t> codes; // ids.size() x m
        std::vector<float> norms;
        std::vector<std::uint8_t> qnorms;
        friend bool operator==(const Bucket&, const Bucket&) = default;
    };

    IvfIndex() = default;

    /// Fits the AQ decoder (on x minus its centroid), the centroid codes and
    /// the greedy pairwise decoder from the encodings of `train`.
    static IvfIndex train(const CompiledModel& model, std::uint64_t model_hash,
                          const VectorSet& train, const IndexOptions& opts = {});

    /// Encodes and stores vectors; throws ConfigError on a duplicate id.
    void add(const CompiledModel& model, const VectorSet& x, std::span<const std::int64_t> ids);

    std::vector<Neighbor> query(const CompiledModel& model, std::span<const float> q,
                                const SearchParams& params, QueryStats* stats = nullptr) const;

    /// AQ distance estimate of stored entry `pos` in bucket `b` (stage 1).
    double aq_distance(std::span<const float> q, std::size_t b, std::size_t pos) const;
    /// ||q - (c_b + sum_m C_m[code_m])||^2 computed directly.
    double aq_direct_distance(std::span<const float> q, std::size_t b, std::size_t pos) const;

    /// Codes of all stored vectors with a leading bucket column, in
    /// (bucket, position) order, with their ids.
    CodeArray stored_codes(std::vector<std::int64_t>* ids = nullptr) const;

    std::size_t size() const { return ids_.size(); }
    std::size_t d() const { return d_; }
    std::size_t m() const { return m_; }
    std::size_t k() const { return k_; }
    std::size_t k_ivf() const { return centroids_.k(); }
    std::uint64_t model_hash() const { return model_hash_; }
    const Codebook& centroids() const { return centroids_; }
    const AqDecoder& aq() const { return aq_; }
    const PairwiseDecoder& pairwise() const { return pairwise_; }
    const IvfCentroidCodes& ivf_codes() const { return ivf_codes_; }
    const std::vector<Bucket>& buckets() const { return buckets_; }
    bool quantized_norms() const { return quantize_norms_; }
    double pair_shrink() const { return pair_shrink_; }

    std::vector<std::uint8_t> serialize() const;
    static IvfIndex deserialize(std::span<const std::uint8_t> bytes);
    friend bool operator==(const IvfIndex& a, const IvfIndex& b);

private:
    std::size_t d_ = 0, m_ = 0, k_ = 0, a_ = 0, b_ = 0;
    std::uint64_t model_hash_ = 0;
    Codebook centroids_;
    AqDecoder aq_;
    PairwiseDecoder pairwise_;
    IvfCentroidCodes ivf_codes_;
    bool quantize_norms_ = false;
    float norm_lo_ = 0.0F, norm_hi_ = 0.0F;
    double pair_shrink_ = 0.0;
    std::vector<Bucket> buckets_;
    std::unordered_set<std::int64_t> ids_;

    double stored_norm(const Bucket& b, std::size_t pos) const;
};

void save_index(const std::filesystem::path& path, const IvfIndex& index);
/// Refuses an index built for a different model.
IvfIndex load_index(const std::filesystem::path& path, std::uint64_t expected_model_hash);

struct SearchResults {
    std::size_t topk = 0;
    /// nq x topk, padded with id -1.
    std::vector<Neighbor> neighbors;
    StageTimes seconds;
    double wall_seconds = 0.0;
    std::size_t unseen_cells = 0;

    std::span<const Neighbor> row(std::size_t q) const {
        return {neighbors.data() + q * topk, topk};
    }
};

/// Runs all queries (in parallel across queries).
SearchResults search(const IvfIndex& index, const CompiledModel& model, const VectorSet& queries,
                     const SearchParams& params);

/// Exhaustive scan of decoded reconstructions, ordered by (distance, id).
std::vector<Neighbor> exhaustive_scan(std::span<const float> q, const VectorSet& recon,
                                      std::span<const std::int64_t> ids, std::size_t topk);

} // namespace qinco
