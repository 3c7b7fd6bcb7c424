#pragma once

#include <qinco/autodiff/tape.hpp>

#include <cmath>
#include <numbers>
#include <vector>

namespace qinco::ad {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

/// AdamW with decoupled weight decay: p <- p - lr*wd*p, then the
/// bias-corrected adaptive update.
template <class T>
class AdamW {
public:
    AdamW(std::vector<Parameter<T>*> params, AdamWOptions opts = {})
        : params_(std::move(params)), opts_(opts) {
        for (auto* p : params_) {
            m_.emplace_back(p->size(), T(0));
            v_.emplace_back(p->size(), T(0));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
        const T decay = static_cast<T>(1.0 - lr * opts_.weight_decay);
        const T step_size = static_cast<T>(lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T eps = static_cast<T>(opts_.eps);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& w = params_[i]->value();
            const auto& g = params_[i]->grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < w.size(); ++j) {
                w[j] *= decay;
                m[j] = b1 * m[j] + (T(1) - b1) * g[j];
                v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
                w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
            }
        }
    }

    void zero_grad() {
        for (auto* p : params_) {
            p->zero_grad();
        }
    }

    std::size_t steps() const { return t_; }
    const std::vector<Parameter<T>*>& params() const { return params_; }

private:
    std::vector<Parameter<T>*> params_;
    AdamWOptions opts_;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
    std::size_t t_ = 0;
};

struct LrSchedule {
    double max_lr = 8e-4;
    double min_lr_fraction = 1e-3;
    std::size_t total_steps = 1;
    std::size_t warmup_steps = 0;
};

/// Linear warmup to max_lr, then cosine decay to max_lr * min_lr_fraction at
/// total_steps (held there afterwards).
inline double cosine_lr(const LrSchedule& s, std::size_t step) {
    QINCO_CHECK(s.min_lr_fraction > 0.0 && s.min_lr_fraction <= 1.0,
                "min_lr_fraction must be in (0, 1]");
    if (step < s.warmup_steps) {
        return s.max_lr * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
    }
    const double lo = s.max_lr * s.min_lr_fraction;
    const std::size_t span = s.total_steps > s.warmup_steps ? s.total_steps - s.warmup_steps : 0;
    if (span == 0 || step >= s.total_steps) {
        return span == 0 && step < s.total_steps ? s.max_lr : lo;
    }
    const double t = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
    return lo + (s.max_lr - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

/// Scales all gradients by max_norm / (norm + 1e-6) when the global L2 norm
/// exceeds max_norm, and returns the norm before clipping. A rounding
/// overshoot in the rescaled values is shaved off, so the result never
/// exceeds max_norm.
template <class T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
    auto global_norm = [&] {
        double sq = 0.0;
        for (const auto* p : params) {
            for (T g : p->grad()) {
                sq += static_cast<double>(g) * static_cast<double>(g);
            }
        }
        return std::sqrt(sq);
    };
    auto scale_all = [&](T s) {
        for (auto* p : params) {
            for (T& g : p->grad()) {
                g *= s;
            }
        }
    };
    const double norm = global_norm();
    if (norm > max_norm) {
        scale_all(static_cast<T>(max_norm / (norm + 1e-6)));
        while (global_norm() > max_norm) {
            scale_all(static_cast<T>(1.0 - 0x1.0p-20));
        }
    }
    return norm;
}

} // namespace qinco::ad
