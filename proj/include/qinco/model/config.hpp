#pragma once

#include <qinco/util/common.hpp>

#include <string>

namespace qinco {

struct QincoConfig {
    std::size_t m = 8;
    std::size_t k = 256;
    std::size_t d = 0;
    std::size_t d_e = 128;
    std::size_t d_h = 256;
    std::size_t depth = 2;
    /// 0: candidates ranked by plain distance to the pre-selection codebook.
    std::size_t preselect_depth = 0;
    std::size_t preselect_d_h = 128;
    std::size_t a_train = 16;
    std::size_t b_train = 32;
    std::size_t a_eval = 32;
    std::size_t b_eval = 64;
    bool ivf_enabled = false;

    /// Throws ConfigError on an inconsistent configuration.
    void validate() const;

    friend bool operator==(const QincoConfig&, const QincoConfig&) = default;
};

/// Applies the named architecture (S, M or L) to `base`: sets depth, d_e, d_h.
QincoConfig apply_preset(QincoConfig base, const std::string& name);

} // namespace qinco
