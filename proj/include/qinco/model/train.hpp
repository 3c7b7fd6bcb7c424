#pragma once

#include <qinco/model/model.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace qinco {

struct InitOptions {
    std::size_t kmeans_iters = 10;
    /// Codebook noise std as a fraction of the per-feature std of each RQ codebook.
    double noise = 0.025;
};

/// Codebooks C and C~ start from the same RQ codebooks with independent
/// Gaussian noise; networks get Kaiming-uniform weights with zero biases and
/// zero down-projections. With IVF centroids the RQ is fitted on x minus the
/// nearest centroid.
QincoModel init_from_rq(const QincoConfig& config, const VectorSet& train_sample,
                        std::uint64_t seed, const InitOptions& opts = {},
                        const std::optional<Codebook>& ivf_centroids = std::nullopt);

struct EpochMetrics {
    std::size_t epoch = 0;
    /// Mean training objective (per-step reconstruction terms plus the
    /// pre-selection term) over the epoch's batches.
    double train_loss = 0.0;
    /// Mean ||x - x-hat^M||^2 of the training encodings.
    double train_mse = 0.0;
    double val_mse = 0.0;
    /// Learning rate of the epoch's last batch.
    double lr = 0.0;
    std::size_t resets = 0;
    double seconds = 0.0;
};

struct TrainOptions {
    std::size_t epochs = 10;
    /// 0 means min(train.n, 10M); epochs walk through rotating segments.
    std::size_t samples_per_epoch = 0;
    std::size_t batch_size = 1024;
    double lr = 8e-4;
    double min_lr_fraction = 1e-3;
    std::size_t warmup_steps = 0;
    double weight_decay = 0.1;
    double grad_clip = 0.1;
    bool reset_dead = true;
    /// Stops gradients between steps (ablation).
    bool detach_steps = false;
    double aux_weight = 1.0;
    std::uint64_t seed = 0;
    /// Rows per gradient shard; fixes the reduction order.
    std::size_t shard_size = 256;
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    double init_val_mse = 0.0;
};

/// Alternates beam-search encoding of each batch with a gradient step on the
/// selected codes. Throws NumericalError on a non-finite loss.
TrainResult train(QincoModel& model, const VectorSet& train_data, const VectorSet& val_data,
                  const TrainOptions& opts);

} // namespace qinco
