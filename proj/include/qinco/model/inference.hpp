#pragma once

#include <qinco/model/model.hpp>
#include <qinco/util/kernels.hpp>

#include <span>
#include <vector>

namespace qinco {

/// Inference form of a StepNet over a fixed codebook. The codeword half of
/// the concat layer is folded into a per-entry table
///   cterm[k] = c_emb[k] + c_emb[k] W_top,
/// so one evaluation costs xprev W_bot + b, the residual blocks and P_out.
/// Each output row depends only on its own inputs, which makes batched
/// encoding and one-row decoding bit-identical.
class CompiledNet {
public:
    struct Scratch {
        std::vector<float> xterm, v, h, t;
    };

    CompiledNet() = default;
    CompiledNet(const StepNet& net, std::span<const float> codebook);

    std::size_t d() const { return d_; }
    std::size_t k() const { return k_; }

    /// out[r] = f(C[code[r]] | xprev[hyp[r]]) for r < rows; xprev holds nh rows.
    void eval(const float* xprev, std::size_t nh, const std::uint32_t* hyp, const code_t* code,
              std::size_t rows, float* out, Scratch& s) const;

private:
    std::size_t d_ = 0, d_e_ = 0, d_h_ = 0, depth_ = 0, k_ = 0;
    std::vector<float> codebook_; // k x d
    std::vector<float> cterm_;    // k x d_e
    PackedMatrix w_bot_;
    std::vector<float> bias_;
    std::vector<PackedMatrix> up_, down_;
    PackedMatrix out_;
};

/// Read-only inference form of a QincoModel.
class CompiledModel {
public:
    explicit CompiledModel(const QincoModel& model);

    const QincoConfig& config() const { return config_; }
    std::size_t steps() const { return f_.size(); }
    const CompiledNet& net(std::size_t step) const { return f_[step]; }
    const std::optional<Codebook>& ivf_centroids() const { return ivf_; }

    /// Pre-selection scores of all K candidates for one hypothesis:
    /// ||r - c~_k||^2 (plain codebook) or ||r - g(c~_k | xprev)||^2.
    void preselect_scores(std::size_t step, const float* r, const float* xprev, double* scores,
                          CompiledNet::Scratch& s, std::vector<float>& gbuf) const;

private:
    QincoConfig config_;
    std::vector<CompiledNet> f_;
    std::vector<CompiledNet> g_;
    std::vector<std::vector<float>> pre_;      // K x d per step
    std::vector<std::vector<double>> pre_norm_; // ||c~_k||^2
    std::optional<Codebook> ivf_;
};

/// Indices of the `a` lowest scores, ascending by (score, index).
std::vector<code_t> top_a(std::span<const double> scores, std::size_t a);

/// The `a` candidates of step `step` for residual r = x - xprev.
std::vector<code_t> preselect(const CompiledModel& model, std::size_t step,
                              std::span<const float> r, std::span<const float> xprev,
                              std::size_t a);

/// f(c | xprev) for an arbitrary codeword c.
std::vector<float> step_forward(const StepNet& net, std::span<const float> c,
                                std::span<const float> xprev);

struct EncodeResult {
    /// n x steps codes, k = K.
    CodeArray codes;
    /// I^0 per vector (empty without IVF).
    std::vector<code_t> buckets;
    /// ||x - decode(codes)||^2 per vector.
    std::vector<double> losses;
};

/// Beam search with pre-selection. At each step every surviving hypothesis
/// proposes its own `a` pre-selected candidates, f is evaluated on all
/// hypothesis x candidate pairs and the `b` lowest (loss, code tuple)
/// expansions survive. `steps` = 0 encodes with all M steps, otherwise only
/// the first `steps`.
EncodeResult encode_beam(const CompiledModel& model, const VectorSet& x, std::size_t a,
                         std::size_t b, std::size_t steps = 0);

/// Greedy encoding without pre-selection: at each step all K codewords are
/// evaluated and the lowest loss (then smallest index) is kept.
EncodeResult encode_greedy(const CompiledModel& model, const VectorSet& x, std::size_t steps = 0);

/// x-hat^steps for codes with `steps` columns, or `steps`+1 with a leading
/// IVF bucket column when the model has IVF centroids.
VectorSet decode(const CompiledModel& model, const CodeArray& codes);

/// Prepends the bucket column; k becomes max(codes.k, k_ivf).
CodeArray with_bucket_column(const CodeArray& codes, std::span<const code_t> buckets,
                             std::size_t k_ivf);

} // namespace qinco
