#pragma once

#include <qinco/autodiff/tape.hpp>
#include <qinco/util/random.hpp>

#include <string>
#include <vector>

namespace qinco {

/// Weights of one implicit-codebook network f(c | xprev):
///
///   c_emb = P_in(c)
///   v_0   = c_emb + [c_emb, xprev] W + b
///   v_i   = v_{i-1} + relu(v_{i-1} U_i) D_i
///   f     = c + P_out(v_L)
///
/// P_in and P_out are linear when d != d_e and the identity otherwise. Rows of
/// W are ordered [c_emb part; xprev part].
template <class T>
struct StepNetT {
    std::size_t d = 0;
    std::size_t d_e = 0;
    std::size_t d_h = 0;
    std::size_t depth = 0;
    ad::Parameter<T> in_proj;  // d x d_e, empty when d == d_e
    ad::Parameter<T> concat_w; // (d_e + d) x d_e
    ad::Parameter<T> concat_b; // 1 x d_e
    std::vector<ad::Parameter<T>> up;   // d_e x d_h
    std::vector<ad::Parameter<T>> down; // d_h x d_e
    ad::Parameter<T> out_proj; // d_e x d, empty when d == d_e

    StepNetT() = default;
    StepNetT(const std::string& prefix, std::size_t d_, std::size_t d_e_, std::size_t d_h_,
             std::size_t depth_)
        : d(d_), d_e(d_e_), d_h(d_h_), depth(depth_),
          in_proj(prefix + ".in_proj", d_ != d_e_ ? d_ : 0, d_ != d_e_ ? d_e_ : 0),
          concat_w(prefix + ".concat.w", d_e_ + d_, d_e_), concat_b(prefix + ".concat.b", 1, d_e_),
          out_proj(prefix + ".out_proj", d_ != d_e_ ? d_e_ : 0, d_ != d_e_ ? d_ : 0) {
        for (std::size_t i = 0; i < depth_; ++i) {
            up.emplace_back(prefix + ".block" + std::to_string(i) + ".up", d_e_, d_h_);
            down.emplace_back(prefix + ".block" + std::to_string(i) + ".down", d_h_, d_e_);
        }
    }

    bool has_in_proj() const { return d != d_e; }
    bool has_out_proj() const { return d != d_e; }

    std::vector<ad::Parameter<T>*> parameters() {
        std::vector<ad::Parameter<T>*> ps;
        if (has_in_proj()) ps.push_back(&in_proj);
        ps.push_back(&concat_w);
        ps.push_back(&concat_b);
        for (std::size_t i = 0; i < depth; ++i) {
            ps.push_back(&up[i]);
            ps.push_back(&down[i]);
        }
        if (has_out_proj()) ps.push_back(&out_proj);
        return ps;
    }

    std::vector<const ad::Parameter<T>*> parameters() const {
        std::vector<const ad::Parameter<T>*> ps;
        for (auto* p : const_cast<StepNetT*>(this)->parameters()) ps.push_back(p);
        return ps;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* p : parameters()) n += p->size();
        return n;
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; zero bias and zero
    /// down-projections, so every residual block starts as the identity.
    void init_kaiming(Rng& rng) {
        auto fill = [&](ad::Parameter<T>& p) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(p.rows()));
            for (auto& v : p.value()) v = static_cast<T>(rng.uniform(-bound, bound));
        };
        if (has_in_proj()) fill(in_proj);
        fill(concat_w);
        std::fill(concat_b.value().begin(), concat_b.value().end(), T(0));
        for (std::size_t i = 0; i < depth; ++i) {
            fill(up[i]);
            std::fill(down[i].value().begin(), down[i].value().end(), T(0));
        }
        if (has_out_proj()) fill(out_proj);
    }

    /// Makes f(c | x) == c exactly: zero out_proj when it exists, otherwise
    /// v_0 is forced to zero (W = [-I; 0], b = 0) with zero down-projections.
    void set_identity() {
        for (auto& p : down) std::fill(p.value().begin(), p.value().end(), T(0));
        if (has_out_proj()) {
            std::fill(out_proj.value().begin(), out_proj.value().end(), T(0));
            return;
        }
        std::fill(concat_w.value().begin(), concat_w.value().end(), T(0));
        std::fill(concat_b.value().begin(), concat_b.value().end(), T(0));
        for (std::size_t j = 0; j < d_e; ++j) concat_w.value()[j * d_e + j] = T(-1);
    }

    template <class U>
    StepNetT<U> cast() const {
        StepNetT<U> o;
        o.d = d;
        o.d_e = d_e;
        o.d_h = d_h;
        o.depth = depth;
        o.in_proj = in_proj.template cast<U>();
        o.concat_w = concat_w.template cast<U>();
        o.concat_b = concat_b.template cast<U>();
        for (const auto& p : up) o.up.push_back(p.template cast<U>());
        for (const auto& p : down) o.down.push_back(p.template cast<U>());
        o.out_proj = out_proj.template cast<U>();
        return o;
    }
};

using StepNet = StepNetT<float>;

/// Records f(c | xprev) on a tape; `c` is n x d, `xprev` n x d.
template <class T>
typename ad::Tape<T>::Node step_graph(ad::Tape<T>& t, StepNetT<T>& net,
                                      typename ad::Tape<T>::Node c,
                                      typename ad::Tape<T>::Node xprev) {
    const auto emb = net.has_in_proj() ? t.linear(c, net.in_proj) : c;
    auto v = t.add(emb, t.linear(t.concat(emb, xprev), net.concat_w, &net.concat_b));
    for (std::size_t i = 0; i < net.depth; ++i) {
        v = t.add(v, t.linear(t.relu(t.linear(v, net.up[i])), net.down[i]));
    }
    const auto p = net.has_out_proj() ? t.linear(v, net.out_proj) : v;
    return t.add(c, p);
}

} // namespace qinco
