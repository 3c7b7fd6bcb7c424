#include <qinco/model/config.hpp>

namespace qinco {

void QincoConfig::validate() const {
    QINCO_CHECK(m >= 1, "m must be >= 1");
    QINCO_CHECK(k >= 1, "k must be >= 1");
    QINCO_CHECK(d >= 1, "d must be >= 1");
    QINCO_CHECK(d_e >= 1 && d_h >= 1, "d_e and d_h must be >= 1");
    QINCO_CHECK(preselect_depth == 0 || preselect_d_h >= 1, "preselect_d_h must be >= 1");
    QINCO_CHECK(a_train >= 1 && a_train <= k, "a_train must be in [1, k]");
    QINCO_CHECK(a_eval >= 1 && a_eval <= k, "a_eval must be in [1, k]");
    QINCO_CHECK(b_train >= 1 && b_eval >= 1, "beam sizes must be >= 1");
}

QincoConfig apply_preset(QincoConfig base, const std::string& name) {
    if (name == "S") {
        base.depth = 2;
        base.d_e = 128;
        base.d_h = 256;
    } else if (name == "M") {
        base.depth = 4;
        base.d_e = 384;
        base.d_h = 384;
    } else if (name == "L") {
        base.depth = 16;
        base.d_e = 384;
        base.d_h = 384;
    } else {
        throw ConfigError("unknown model preset '" + name + "' (expected S, M or L)");
    }
    return base;
}

} // namespace qinco
