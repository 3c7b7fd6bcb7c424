#include <qinco/model/inference.hpp>

#include <algorithm>
#include <limits>
#include <numeric>

namespace qinco {

namespace {

struct Expansion {
    double loss;
    std::uint32_t row;
};

PackedMatrix pack_rows(const ad::Parameter<float>& p, std::size_t begin, std::size_t count) {
    const std::size_t cols = p.cols();
    return PackedMatrix(count, cols,
                        std::span<const float>(p.value().data() + begin * cols, count * cols));
}

} // namespace

CompiledNet::CompiledNet(const StepNet& net, std::span<const float> codebook)
    : d_(net.d), d_e_(net.d_e), d_h_(net.d_h), depth_(net.depth), k_(codebook.size() / net.d),
      codebook_(codebook.begin(), codebook.end()) {
    QINCO_CHECK(k_ * d_ == codebook.size(), "codebook size is not a multiple of d");
    const auto w_top = pack_rows(net.concat_w, 0, d_e_);
    w_bot_ = pack_rows(net.concat_w, d_e_, d_);
    bias_ = net.concat_b.value();
    for (std::size_t i = 0; i < depth_; ++i) {
        up_.emplace_back(d_e_, d_h_, net.up[i].value());
        down_.emplace_back(d_h_, d_e_, net.down[i].value());
    }
    if (net.has_out_proj()) {
        out_ = PackedMatrix(d_e_, d_, net.out_proj.value());
    }

    std::vector<float> emb(k_ * d_e_);
    if (net.has_in_proj()) {
        const PackedMatrix in(d_, d_e_, net.in_proj.value());
        in.apply(codebook_.data(), k_, d_, emb.data(), d_e_);
    } else {
        emb = codebook_;
    }
    cterm_.resize(k_ * d_e_);
    w_top.apply(emb.data(), k_, d_e_, cterm_.data(), d_e_);
    for (std::size_t i = 0; i < cterm_.size(); ++i) {
        cterm_[i] = emb[i] + cterm_[i];
    }
}

void CompiledNet::eval(const float* xprev, std::size_t nh, const std::uint32_t* hyp,
                       const code_t* code, std::size_t rows, float* out, Scratch& s) const {
    s.xterm.resize(nh * d_e_);
    w_bot_.apply(xprev, nh, d_, s.xterm.data(), d_e_);
    for (std::size_t h = 0; h < nh; ++h) {
        float* xt = s.xterm.data() + h * d_e_;
        for (std::size_t j = 0; j < d_e_; ++j) {
            xt[j] += bias_[j];
        }
    }
    s.v.resize(rows * d_e_);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* ct = cterm_.data() + code[r] * d_e_;
        const float* xt = s.xterm.data() + hyp[r] * d_e_;
        float* v = s.v.data() + r * d_e_;
        for (std::size_t j = 0; j < d_e_; ++j) {
            v[j] = ct[j] + xt[j];
        }
    }
    s.h.resize(rows * d_h_);
    s.t.resize(rows * std::max(d_e_, d_));
    for (std::size_t i = 0; i < depth_; ++i) {
        up_[i].apply(s.v.data(), rows, d_e_, s.h.data(), d_h_);
        for (auto& x : s.h) {
            x = x > 0.0F ? x : 0.0F;
        }
        down_[i].apply(s.h.data(), rows, d_h_, s.t.data(), d_e_);
        for (std::size_t j = 0; j < rows * d_e_; ++j) {
            s.v[j] += s.t[j];
        }
    }
    const float* p = s.v.data();
    if (!out_.empty()) {
        out_.apply(s.v.data(), rows, d_e_, s.t.data(), d_);
        p = s.t.data();
    }
    for (std::size_t r = 0; r < rows; ++r) {
        const float* c = codebook_.data() + code[r] * d_;
        const float* pr = p + r * d_;
        float* o = out + r * d_;
        for (std::size_t j = 0; j < d_; ++j) {
            o[j] = c[j] + pr[j];
        }
    }
}

CompiledModel::CompiledModel(const QincoModel& model)
    : config_(model.config), ivf_(model.ivf_centroids) {
    for (const auto& s : model.steps) {
        f_.emplace_back(s.net, s.codebook.value());
        pre_.push_back(s.pre_codebook.value());
        std::vector<double> norms(config_.k);
        for (std::size_t k = 0; k < config_.k; ++k) {
            norms[k] = squared_norm(pre_.back().data() + k * config_.d, config_.d);
        }
        pre_norm_.push_back(std::move(norms));
        if (s.pre_net) {
            g_.emplace_back(*s.pre_net, s.pre_codebook.value());
        }
    }
    if (config_.ivf_enabled) {
        QINCO_CHECK(ivf_.has_value(), "IVF-enabled model has no centroids");
    }
}

void CompiledModel::preselect_scores(std::size_t step, const float* r, const float* xprev,
                                     double* scores, CompiledNet::Scratch& s,
                                     std::vector<float>& gbuf) const {
    const std::size_t k = config_.k, d = config_.d;
    if (g_.empty()) {
        // ||r - c||^2 = ||r||^2 - 2 <r, c> + ||c||^2
        const double rn = squared_norm(r, d);
        const float* table = pre_[step].data();
        for (std::size_t c = 0; c < k; ++c) {
            const float* row = table + c * d;
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += static_cast<double>(r[j]) * row[j];
            }
            scores[c] = rn - 2.0 * dot + pre_norm_[step][c];
        }
        return;
    }
    std::vector<std::uint32_t> hyp(k, 0);
    std::vector<code_t> codes(k);
    std::iota(codes.begin(), codes.end(), code_t{0});
    gbuf.resize(k * d);
    g_[step].eval(xprev, 1, hyp.data(), codes.data(), k, gbuf.data(), s);
    for (std::size_t c = 0; c < k; ++c) {
        scores[c] = squared_distance(r, gbuf.data() + c * d, d);
    }
}

std::vector<code_t> top_a(std::span<const double> scores, std::size_t a) {
    QINCO_CHECK(a >= 1 && a <= scores.size(), "a must be in [1, K]");
    std::vector<code_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), code_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(a), idx.end(),
                      [&](code_t x, code_t y) {
                          return scores[x] != scores[y] ? scores[x] < scores[y] : x < y;
                      });
    idx.resize(a);
    return idx;
}

std::vector<code_t> preselect(const CompiledModel& model, std::size_t step,
                              std::span<const float> r, std::span<const float> xprev,
                              std::size_t a) {
    const auto& c = model.config();
    QINCO_CHECK(step < model.steps(), "step out of range");
    QINCO_CHECK(r.size() == c.d && xprev.size() == c.d, "dimension mismatch");
    std::vector<double> scores(c.k);
    CompiledNet::Scratch s;
    std::vector<float> gbuf;
    model.preselect_scores(step, r.data(), xprev.data(), scores.data(), s, gbuf);
    return top_a(scores, a);
}

std::vector<float> step_forward(const StepNet& net, std::span<const float> c,
                                std::span<const float> xprev) {
    QINCO_CHECK(c.size() == net.d && xprev.size() == net.d, "step_forward: dimension mismatch");
    const CompiledNet cn(net, c);
    std::vector<float> out(net.d);
    const std::uint32_t hyp = 0;
    const code_t code = 0;
    CompiledNet::Scratch s;
    cn.eval(xprev.data(), 1, &hyp, &code, 1, out.data(), s);
    return out;
}

EncodeResult encode_beam(const CompiledModel& model, const VectorSet& x, std::size_t a,
                         std::size_t b, std::size_t steps) {
    const auto& cfg = model.config();
    const std::size_t n = x.n(), d = cfg.d, k = cfg.k;
    const std::size_t m = steps == 0 ? model.steps() : steps;
    QINCO_CHECK(m <= model.steps(), "more steps requested than the model has");
    QINCO_CHECK(a >= 1 && a <= k, "a must be in [1, K]");
    QINCO_CHECK(b >= 1, "b must be >= 1");
    QINCO_CHECK(n == 0 || x.d() == d, "dimension mismatch");

    EncodeResult res{CodeArray(n, m, k), {}, std::vector<double>(n, 0.0)};
    if (model.ivf_centroids()) {
        const auto& cents = *model.ivf_centroids();
        res.buckets = nearest_rows(x.data(), n, cents.data(), cents.k(), d).index;
    }

#pragma omp parallel
    {
        CompiledNet::Scratch scratch;
        std::vector<float> gbuf, resid(d), xnew, out;
        std::vector<double> scores(k);
        std::vector<code_t> hyp_codes(b * m), next_codes(b * m), cand;
        std::vector<float> hyp_xhat(b * d), next_xhat(b * d);
        std::vector<double> hyp_loss(b);
        std::vector<std::uint32_t> row_hyp;
        std::vector<code_t> row_code;
        std::vector<Expansion> exps;

#pragma omp for schedule(dynamic, 8)
        for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            const float* xi = x.row(i).data();
            std::size_t nh = 1;
            if (res.buckets.empty()) {
                std::fill_n(hyp_xhat.begin(), d, 0.0F);
            } else {
                std::copy_n(model.ivf_centroids()->row(res.buckets[i]).data(), d,
                            hyp_xhat.begin());
            }
            hyp_loss[0] = squared_distance(xi, hyp_xhat.data(), d);

            for (std::size_t step = 0; step < m; ++step) {
                row_hyp.clear();
                row_code.clear();
                for (std::size_t h = 0; h < nh; ++h) {
                    const float* xh = hyp_xhat.data() + h * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        resid[j] = xi[j] - xh[j];
                    }
                    model.preselect_scores(step, resid.data(), xh, scores.data(), scratch, gbuf);
                    cand = top_a(scores, a);
                    for (code_t c : cand) {
                        row_hyp.push_back(static_cast<std::uint32_t>(h));
                        row_code.push_back(c);
                    }
                }
                const std::size_t rows = row_code.size();
                out.resize(rows * d);
                xnew.resize(rows * d);
                model.net(step).eval(hyp_xhat.data(), nh, row_hyp.data(), row_code.data(), rows,
                                     out.data(), scratch);
                exps.resize(rows);
                for (std::size_t r = 0; r < rows; ++r) {
                    const float* xh = hyp_xhat.data() + row_hyp[r] * d;
                    const float* o = out.data() + r * d;
                    float* xn = xnew.data() + r * d;
                    for (std::size_t j = 0; j < d; ++j) {
                        xn[j] = xh[j] + o[j];
                    }
                    exps[r] = {squared_distance(xi, xn, d), static_cast<std::uint32_t>(r)};
                }
                // Hypotheses hold distinct code tuples, so expansions are distinct too.
                auto before = [&](const Expansion& p, const Expansion& q) {
                    if (p.loss != q.loss) {
                        return p.loss < q.loss;
                    }
                    const std::uint32_t hp = row_hyp[p.row], hq = row_hyp[q.row];
                    if (hp != hq) {
                        const code_t* cp = hyp_codes.data() + hp * m;
                        const code_t* cq = hyp_codes.data() + hq * m;
                        return std::lexicographical_compare(cp, cp + step, cq, cq + step);
                    }
                    return row_code[p.row] < row_code[q.row];
                };
                const std::size_t keep = std::min(b, rows);
                std::partial_sort(exps.begin(), exps.begin() + static_cast<std::ptrdiff_t>(keep),
                                  exps.end(), before);
                for (std::size_t t = 0; t < keep; ++t) {
                    const auto& e = exps[t];
                    std::copy_n(hyp_codes.begin() + row_hyp[e.row] * m, step,
                                next_codes.begin() + t * m);
                    next_codes[t * m + step] = row_code[e.row];
                    std::copy_n(xnew.begin() + e.row * d, d, next_xhat.begin() + t * d);
                    hyp_loss[t] = e.loss;
                }
                nh = keep;
                std::swap(hyp_codes, next_codes);
                std::swap(hyp_xhat, next_xhat);
            }
            std::copy_n(hyp_codes.begin(), m, res.codes.row(i).begin());
            res.losses[i] = hyp_loss[0];
        }
    }
    return res;
}

EncodeResult encode_greedy(const CompiledModel& model, const VectorSet& x, std::size_t steps) {
    const auto& cfg = model.config();
    const std::size_t n = x.n(), d = cfg.d, k = cfg.k;
    const std::size_t m = steps == 0 ? model.steps() : steps;
    QINCO_CHECK(m <= model.steps(), "more steps requested than the model has");
    QINCO_CHECK(n == 0 || x.d() == d, "dimension mismatch");

    EncodeResult res{CodeArray(n, m, k), {}, std::vector<double>(n, 0.0)};
    if (model.ivf_centroids()) {
        const auto& cents = *model.ivf_centroids();
        res.buckets = nearest_rows(x.data(), n, cents.data(), cents.k(), d).index;
    }
#pragma omp parallel
    {
        CompiledNet::Scratch scratch;
        std::vector<float> xhat(d), out(k * d), xn(d);
        const std::vector<std::uint32_t> hyp(k, 0);
        std::vector<code_t> all(k);
        std::iota(all.begin(), all.end(), code_t{0});
#pragma omp for schedule(dynamic, 8)
        for (std::int64_t ii = 0; ii < static_cast<std::int64_t>(n); ++ii) {
            const auto i = static_cast<std::size_t>(ii);
            const float* xi = x.row(i).data();
            if (res.buckets.empty()) {
                std::fill(xhat.begin(), xhat.end(), 0.0F);
            } else {
                const auto c = model.ivf_centroids()->row(res.buckets[i]);
                std::copy(c.begin(), c.end(), xhat.begin());
            }
            double best_loss = squared_distance(xi, xhat.data(), d);
            for (std::size_t step = 0; step < m; ++step) {
                model.net(step).eval(xhat.data(), 1, hyp.data(), all.data(), k, out.data(),
                                     scratch);
                code_t best = 0;
                best_loss = std::numeric_limits<double>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    for (std::size_t j = 0; j < d; ++j) {
                        xn[j] = xhat[j] + out[c * d + j];
                    }
                    const double l = squared_distance(xi, xn.data(), d);
                    if (l < best_loss) {
                        best_loss = l;
                        best = static_cast<code_t>(c);
                    }
                }
                for (std::size_t j = 0; j < d; ++j) {
                    xhat[j] += out[best * d + j];
                }
                res.codes(i, step) = best;
            }
            res.losses[i] = best_loss;
        }
    }
    return res;
}

VectorSet decode(const CompiledModel& model, const CodeArray& codes) {
    const auto& cfg = model.config();
    const bool ivf = model.ivf_centroids().has_value();
    const std::size_t lead = ivf ? 1 : 0;
    QINCO_CHECK(codes.m() >= lead, "code array is missing the IVF bucket column");
    const std::size_t m = codes.m() - lead;
    QINCO_CHECK(m <= model.steps(), "more code columns than model steps");
    const std::size_t n = codes.n(), d = cfg.d;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < codes.m(); ++j) {
            const std::size_t limit = (ivf && j == 0) ? model.ivf_centroids()->k() : cfg.k;
            if (codes(i, j) >= limit) {
                throw FormatError("code " + std::to_string(codes(i, j)) + " at row " +
                                  std::to_string(i) + ", column " + std::to_string(j) +
                                  " out of range (limit " + std::to_string(limit) + ")");
            }
        }
    }

    VectorSet xhat(n, d);
    if (ivf) {
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(model.ivf_centroids()->row(codes(i, 0)).data(), d, xhat.row(i).data());
        }
    }
    constexpr std::size_t kChunk = 256;
    const auto nchunks = static_cast<std::int64_t>((n + kChunk - 1) / kChunk);
#pragma omp parallel
    {
        CompiledNet::Scratch scratch;
        std::vector<float> out;
        std::vector<std::uint32_t> hyp;
        std::vector<code_t> col;
#pragma omp for schedule(static)
        for (std::int64_t ch = 0; ch < nchunks; ++ch) {
            const std::size_t c0 = static_cast<std::size_t>(ch) * kChunk;
            const std::size_t rows = std::min(kChunk, n - c0);
            hyp.resize(rows);
            std::iota(hyp.begin(), hyp.end(), std::uint32_t{0});
            col.resize(rows);
            out.resize(rows * d);
            float* xh = xhat.row(c0).data();
            for (std::size_t step = 0; step < m; ++step) {
                for (std::size_t r = 0; r < rows; ++r) {
                    col[r] = codes(c0 + r, lead + step);
                }
                model.net(step).eval(xh, rows, hyp.data(), col.data(), rows, out.data(), scratch);
                for (std::size_t j = 0; j < rows * d; ++j) {
                    xh[j] += out[j];
                }
            }
        }
    }
    return xhat;
}

CodeArray with_bucket_column(const CodeArray& codes, std::span<const code_t> buckets,
                             std::size_t k_ivf) {
    QINCO_CHECK(buckets.size() == codes.n(), "one bucket per vector required");
    CodeArray out(codes.n(), codes.m() + 1, std::max(codes.k(), k_ivf));
    for (std::size_t i = 0; i < codes.n(); ++i) {
        out(i, 0) = buckets[i];
        std::copy(codes.row(i).begin(), codes.row(i).end(), out.row(i).begin() + 1);
    }
    return out;
}

} // namespace qinco
