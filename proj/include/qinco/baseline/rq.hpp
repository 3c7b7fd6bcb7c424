#pragma once

#include <qinco/baseline/codebook.hpp>
#include <qinco/baseline/kmeans.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace qinco {

/// Residual quantizer: decoding sums one entry of each of M codebooks.
struct RqCodec {
    std::vector<Codebook> codebooks;
    std::size_t beam_default = 1;

    std::size_t m() const { return codebooks.size(); }
    std::size_t k() const { return codebooks.empty() ? 0 : codebooks.front().k(); }
    std::size_t d() const { return codebooks.empty() ? 0 : codebooks.front().d(); }

    friend bool operator==(const RqCodec&, const RqCodec&) = default;
};

struct RqTrainResult {
    RqCodec codec;
    /// Greedy training MSE after each step (index 0 is before any step).
    std::vector<double> step_mse;
    std::vector<std::string> warnings;
};

/// Fits codebook m with k-means on the residuals left by greedy encoding
/// through steps 1..m-1.
RqTrainResult rq_train(const VectorSet& data, std::size_t m, std::size_t k,
                       std::size_t kmeans_iters, std::uint64_t seed);

struct RqEncodeResult {
    CodeArray codes;
    std::vector<double> losses;
};

/// Beam search over partial encodings. Each expansion's loss is
/// ||x - (xhat + c)||^2 with the reconstruction accumulated in float; the
/// `beam` best (loss, code tuple) hypotheses survive each step. beam=1 is
/// greedy encoding.
RqEncodeResult rq_encode(const RqCodec& codec, const VectorSet& x, std::size_t beam);

/// Sum of the selected entries, accumulated left to right in float.
VectorSet rq_decode(const RqCodec& codec, const CodeArray& codes);

std::vector<std::uint8_t> serialize_rq(const RqCodec& codec);
RqCodec deserialize_rq(std::span<const std::uint8_t> bytes);
void save_rq(const std::filesystem::path& path, const RqCodec& codec);
RqCodec load_rq(const std::filesystem::path& path);

} // namespace qinco
