#pragma once

#include <qinco/baseline/codebook.hpp>
#include <qinco/data/dataset.hpp>
#include <qinco/model/config.hpp>
#include <qinco/model/step_net.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace qinco {

struct QincoStep {
    ad::Parameter<float> codebook;     // K x d
    StepNet net;
    ad::Parameter<float> pre_codebook; // K x d
    std::optional<StepNet> pre_net;    // present when preselect_depth >= 1

    Codebook codebook_table() const;
    Codebook pre_codebook_table() const;
};

struct QincoModel {
    QincoConfig config;
    std::vector<QincoStep> steps;
    NormStats norm;
    /// Coarse centroids; x-hat^0 of a vector is its nearest centroid.
    std::optional<Codebook> ivf_centroids;

    /// Zero codebooks, zero weights, shapes from `config`.
    static QincoModel zeros(const QincoConfig& config);

    /// Trainable parameters of every step (codebooks, nets, pre-selection).
    std::vector<ad::Parameter<float>*> parameters();

    /// Codebooks plus f networks; pre-selection codebooks and networks are
    /// counted only on request.
    std::size_t parameter_count(bool include_preselection = false) const;

    /// Every f (and g) becomes the identity on its codeword input.
    void set_identity();

    friend bool operator==(const QincoModel& a, const QincoModel& b);
};

std::vector<std::uint8_t> serialize_model(const QincoModel& model);
QincoModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const QincoModel& model);
QincoModel load_model(const std::filesystem::path& path);

/// FNV-1a of the serialized model.
std::uint64_t model_hash(const QincoModel& model);

} // namespace qinco
