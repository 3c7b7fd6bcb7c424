#include <qinco/approx/approx.hpp>

#include <qinco/util/binary_io.hpp>
#include <qinco/util/kernels.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>

namespace qinco {

namespace {

constexpr std::string_view kPairwiseMagic = "QPWD";
constexpr std::uint32_t kPairwiseVersion = 1;

// Joint solves build a dense Gram matrix over all cells.
constexpr std::size_t kMaxJointCells = 8192;

std::size_t cell_count(const CodePair& p, std::size_t k) {
    return p.first == p.second ? k : k * k;
}

std::size_t cell_of(const CodePair& p, std::span<const code_t> codes, std::size_t k) {
    return p.first == p.second ? codes[p.first] : codes[p.first] * k + codes[p.second];
}

// Per-cell sums and counts of the residuals for one pair.
struct CellStats {
    std::vector<double> sum;
    std::vector<std::size_t> count;

    void accumulate(const CodePair& p, const CodeArray& codes, const std::vector<double>& resid,
                    std::size_t d) {
        const std::size_t k = codes.k(), cells = cell_count(p, k);
        sum.assign(cells * d, 0.0);
        count.assign(cells, 0);
        for (std::size_t i = 0; i < codes.n(); ++i) {
            const std::size_t c = cell_of(p, codes.row(i), k);
            ++count[c];
            const double* r = resid.data() + i * d;
            double* s = sum.data() + c * d;
            for (std::size_t j = 0; j < d; ++j) {
                s[j] += r[j];
            }
        }
    }

    // SSE reduction of subtracting the shrunk cell means sum / (n + shrink).
    double reduction(std::size_t d, double shrink = 0.0) const {
        double red = 0.0;
        for (std::size_t c = 0; c < count.size(); ++c) {
            if (count[c] == 0) {
                continue;
            }
            double sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                sq += sum[c * d + j] * sum[c * d + j];
            }
            const double n = static_cast<double>(count[c]);
            red += sq * (n + 2.0 * shrink) / ((n + shrink) * (n + shrink));
        }
        return red;
    }
};

void check_inputs(const CodeArray& codes, const VectorSet& x) {
    QINCO_CHECK(codes.n() == x.n(), "codes and vectors differ in count");
    QINCO_CHECK(codes.n() >= 1, "need at least one vector");
    QINCO_CHECK(codes.k() >= 1, "code alphabet is empty");
    codes.validate();
}

std::vector<double> to_double(const VectorSet& x) {
    return {x.values().begin(), x.values().end()};
}

double mean_sq(const std::vector<double>& resid, std::size_t n) {
    double s = 0.0;
    for (double v : resid) {
        s += v * v;
    }
    return s / static_cast<double>(n);
}

// Codebook of cell means; subtracts the float entries from the residuals so
// later steps see exactly what the decoder will reconstruct.
void apply_means(PairwiseDecoder& dec, const CodePair& p, const CellStats& st,
                 const CodeArray& codes, std::vector<double>& resid, double shrink = 0.0) {
    const std::size_t d = dec.d, cells = st.count.size();
    Codebook cb(cells, d);
    std::vector<std::uint8_t> seen(cells, 0);
    for (std::size_t c = 0; c < cells; ++c) {
        if (st.count[c] == 0) {
            continue;
        }
        seen[c] = 1;
        for (std::size_t j = 0; j < d; ++j) {
            cb.row(c)[j] = static_cast<float>(st.sum[c * d + j] /
                                              (static_cast<double>(st.count[c]) + shrink));
        }
    }
    for (std::size_t i = 0; i < codes.n(); ++i) {
        const float* e = cb.row(cell_of(p, codes.row(i), dec.k)).data();
        double* r = resid.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            r[j] -= e[j];
        }
    }
    dec.pairs.push_back(p);
    dec.codebooks.push_back(std::move(cb));
    dec.seen.push_back(std::move(seen));
    dec.step_mse.push_back(mean_sq(resid, codes.n()));
}

PairwiseDecoder fit_joint(const CodeArray& codes, const VectorSet& x,
                          const std::vector<CodePair>& pairs, double ridge) {
    const std::size_t n = codes.n(), d = x.d(), k = codes.k(), s = pairs.size();
    std::vector<std::size_t> offset(s + 1, 0);
    for (std::size_t t = 0; t < s; ++t) {
        offset[t + 1] = offset[t] + cell_count(pairs[t], k);
    }
    const std::size_t cols = offset[s];
    QINCO_CHECK(cols <= kMaxJointCells, "joint fit needs " + std::to_string(cols) +
                                            " cells; use the sequential mode for large k");
    if (ridge < 0.0) {
        ridge = 1e-6 * static_cast<double>(n);
    }

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cols, cols);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(cols, d);
    std::vector<std::size_t> active(s);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < s; ++t) {
            active[t] = offset[t] + cell_of(pairs[t], codes.row(i), k);
        }
        for (std::size_t a : active) {
            for (std::size_t b : active) {
                gram(a, b) += 1.0;
            }
            for (std::size_t j = 0; j < d; ++j) {
                rhs(a, j) += x.row(i)[j];
            }
        }
    }
    std::vector<std::uint8_t> used(cols);
    for (std::size_t c = 0; c < cols; ++c) {
        used[c] = gram(c, c) > 0.0 ? 1 : 0;
    }
    gram.diagonal().array() += ridge;

    Eigen::MatrixXd w;
    if (ridge > 0.0) {
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success) {
            throw NumericalError("least-squares factorization failed");
        }
        w = llt.solve(rhs);
    } else {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        const auto diag = ldlt.vectorD().cwiseAbs();
        if (ldlt.info() != Eigen::Success || diag.minCoeff() <= 1e-10 * diag.maxCoeff()) {
            throw ConfigError("least-squares system is singular; use ridge > 0");
        }
        w = ldlt.solve(rhs);
    }

    PairwiseDecoder dec;
    dec.k = k;
    dec.d = d;
    dec.pairs = pairs;
    auto resid = to_double(x);
    dec.step_mse.push_back(mean_sq(resid, n));
    for (std::size_t t = 0; t < s; ++t) {
        const std::size_t cells = offset[t + 1] - offset[t];
        Codebook cb(cells, d);
        std::vector<std::uint8_t> seen(cells);
        for (std::size_t c = 0; c < cells; ++c) {
            seen[c] = used[offset[t] + c];
            for (std::size_t j = 0; j < d; ++j) {
                cb.row(c)[j] = static_cast<float>(w(offset[t] + c, j));
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const float* e = cb.row(cell_of(pairs[t], codes.row(i), k)).data();
            for (std::size_t j = 0; j < d; ++j) {
                resid[i * d + j] -= e[j];
            }
        }
        dec.codebooks.push_back(std::move(cb));
        dec.seen.push_back(std::move(seen));
        dec.step_mse.push_back(mean_sq(resid, n));
    }
    return dec;
}

// Decoder from double tables; step_mse from the float entries.
PairwiseDecoder finish(const CodeArray& codes, const VectorSet& x,
                       const std::vector<CodePair>& pairs,
                       const std::vector<std::vector<double>>& tables,
                       std::vector<std::vector<std::uint8_t>> seen) {
    const std::size_t n = codes.n(), d = x.d(), k = codes.k();
    PairwiseDecoder dec;
    dec.k = k;
    dec.d = d;
    dec.pairs = pairs;
    dec.seen = std::move(seen);
    auto resid = to_double(x);
    dec.step_mse.push_back(mean_sq(resid, n));
    for (std::size_t t = 0; t < pairs.size(); ++t) {
        const std::size_t cells = cell_count(pairs[t], k);
        Codebook cb(cells, d);
        for (std::size_t i = 0; i < cells * d; ++i) {
            cb.entries()[i] = static_cast<float>(tables[t][i]);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const float* e = cb.row(cell_of(pairs[t], codes.row(i), k)).data();
            for (std::size_t j = 0; j < d; ++j) {
                resid[i * d + j] -= e[j];
            }
        }
        dec.codebooks.push_back(std::move(cb));
        dec.step_mse.push_back(mean_sq(resid, n));
    }
    return dec;
}

PairwiseDecoder fit_backfit(const CodeArray& codes, const VectorSet& x,
                            const std::vector<CodePair>& pairs, std::size_t sweeps) {
    const std::size_t n = codes.n(), d = x.d(), k = codes.k(), s = pairs.size();

    // Positions in order of first use; each one's unitary table goes into the
    // first pair that uses it.
    std::vector<std::uint32_t> order;
    std::vector<std::uint8_t> used(codes.m(), 0);
    for (const auto& [a, b] : pairs) {
        for (auto p : {a, b}) {
            if (!used[p]) {
                used[p] = 1;
                order.push_back(p);
            }
        }
    }

    // Two additive starting points: the sequential refit and, when small
    // enough, the joint least-squares fit. The better one is kept.
    std::vector<std::vector<double>> unit(codes.m());
    auto resid = to_double(x);
    CellStats st;
    for (auto pos : order) {
        st.accumulate({pos, pos}, codes, resid, d);
        auto& f = unit[pos];
        f.assign(k * d, 0.0);
        for (std::size_t c = 0; c < k; ++c) {
            if (st.count[c] == 0) {
                continue;
            }
            for (std::size_t j = 0; j < d; ++j) {
                f[c * d + j] = st.sum[c * d + j] / static_cast<double>(st.count[c]);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double* e = f.data() + codes(i, pos) * d;
            for (std::size_t j = 0; j < d; ++j) {
                resid[i * d + j] -= e[j];
            }
        }
    }
    if (order.size() * k <= kMaxJointCells) {
        std::vector<CodePair> diag;
        for (auto pos : order) {
            diag.emplace_back(pos, pos);
        }
        const auto joint = fit_joint(codes, x, diag, -1.0);
        if (joint.step_mse.back() < mean_sq(resid, n)) {
            for (std::size_t t = 0; t < order.size(); ++t) {
                const auto& e = joint.codebooks[t].entries();
                unit[order[t]].assign(e.begin(), e.end());
            }
        }
    }

    std::vector<std::vector<double>> tables(s);
    std::vector<std::vector<std::uint8_t>> seen(s);
    std::fill(used.begin(), used.end(), 0);
    for (std::size_t t = 0; t < s; ++t) {
        const auto [a, b] = pairs[t];
        const bool take_a = !used[a], take_b = a != b && !used[b];
        used[a] = used[b] = 1;
        auto& g = tables[t];
        g.assign(cell_count(pairs[t], k) * d, 0.0);
        for (std::size_t ca = 0; ca < k; ++ca) {
            const std::size_t nb = a == b ? 1 : k;
            for (std::size_t cb = 0; cb < nb; ++cb) {
                const std::size_t cell = a == b ? ca : ca * k + cb;
                for (std::size_t j = 0; j < d; ++j) {
                    double v = take_a ? unit[a][ca * d + j] : 0.0;
                    if (take_b) {
                        v += unit[b][cb * d + j];
                    }
                    g[cell * d + j] = v;
                }
            }
        }
    }
    resid = to_double(x);
    for (std::size_t t = 0; t < s; ++t) {
        for (std::size_t i = 0; i < n; ++i) {
            const double* e = tables[t].data() + cell_of(pairs[t], codes.row(i), k) * d;
            for (std::size_t j = 0; j < d; ++j) {
                resid[i * d + j] -= e[j];
            }
        }
    }
    // resid now equals x minus the sum of all tables.
    double sse = mean_sq(resid, n);
    for (std::size_t sweep = 0; sweep < sweeps; ++sweep) {
        for (std::size_t t = 0; t < s; ++t) {
            auto& g = tables[t];
            for (std::size_t i = 0; i < n; ++i) {
                const double* e = g.data() + cell_of(pairs[t], codes.row(i), k) * d;
                for (std::size_t j = 0; j < d; ++j) {
                    resid[i * d + j] += e[j];
                }
            }
            st.accumulate(pairs[t], codes, resid, d);
            seen[t].assign(st.count.size(), 0);
            for (std::size_t c = 0; c < st.count.size(); ++c) {
                if (st.count[c] == 0) {
                    continue;
                }
                seen[t][c] = 1;
                for (std::size_t j = 0; j < d; ++j) {
                    g[c * d + j] = st.sum[c * d + j] / static_cast<double>(st.count[c]);
                }
            }
            for (std::size_t i = 0; i < n; ++i) {
                const double* e = g.data() + cell_of(pairs[t], codes.row(i), k) * d;
                for (std::size_t j = 0; j < d; ++j) {
                    resid[i * d + j] -= e[j];
                }
            }
        }
        const double now = mean_sq(resid, n);
        const bool converged = sse - now <= 1e-9 * sse;
        sse = now;
        if (converged) {
            break;
        }
    }
    if (sweeps == 0) {
        for (std::size_t t = 0; t < s; ++t) {
            seen[t].assign(cell_count(pairs[t], k), 0);
            for (std::size_t i = 0; i < n; ++i) {
                seen[t][cell_of(pairs[t], codes.row(i), k)] = 1;
            }
        }
    }
    return finish(codes, x, pairs, tables, std::move(seen));
}

} // namespace

std::vector<CodePair> consecutive_pairs(std::size_t m) {
    std::vector<CodePair> pairs;
    for (std::uint32_t i = 0; i + 1 < m; i += 2) {
        pairs.emplace_back(i, i + 1);
    }
    if (m % 2 == 1) {
        pairs.emplace_back(static_cast<std::uint32_t>(m - 1), static_cast<std::uint32_t>(m - 1));
    }
    return pairs;
}

PairwiseDecoder fit_pairs_fixed(const CodeArray& codes, const VectorSet& x,
                                const std::vector<CodePair>& pairs, PairFit mode, double ridge,
                                std::size_t sweeps) {
    check_inputs(codes, x);
    std::vector<CodePair> norm;
    for (auto [i, j] : pairs) {
        QINCO_CHECK(i < codes.m() && j < codes.m(), "pair refers to a missing code position");
        norm.emplace_back(std::min(i, j), std::max(i, j));
    }
    if (mode == PairFit::joint) {
        return fit_joint(codes, x, norm, ridge);
    }
    if (mode == PairFit::backfit) {
        return fit_backfit(codes, x, norm, sweeps);
    }
    PairwiseDecoder dec;
    dec.k = codes.k();
    dec.d = x.d();
    auto resid = to_double(x);
    dec.step_mse.push_back(mean_sq(resid, codes.n()));
    CellStats st;
    for (const auto& p : norm) {
        st.accumulate(p, codes, resid, dec.d);
        apply_means(dec, p, st, codes, resid);
    }
    return dec;
}

PairwiseDecoder select_pairs_greedy(const CodeArray& codes, const VectorSet& x,
                                    std::size_t m_prime, double shrink) {
    check_inputs(codes, x);
    QINCO_CHECK(m_prime >= 1, "m_prime must be >= 1");
    QINCO_CHECK(shrink >= 0.0, "shrink must be >= 0");
    std::vector<CodePair> candidates;
    for (std::uint32_t i = 0; i < codes.m(); ++i) {
        for (std::uint32_t j = i; j < codes.m(); ++j) {
            candidates.emplace_back(i, j);
        }
    }
    PairwiseDecoder dec;
    dec.k = codes.k();
    dec.d = x.d();
    auto resid = to_double(x);
    dec.step_mse.push_back(mean_sq(resid, codes.n()));
    std::vector<double> gain(candidates.size());
    for (std::size_t step = 0; step < m_prime; ++step) {
#pragma omp parallel
        {
            CellStats st;
#pragma omp for schedule(dynamic, 1)
            for (std::int64_t c = 0; c < static_cast<std::int64_t>(candidates.size()); ++c) {
                st.accumulate(candidates[c], codes, resid, dec.d);
                gain[c] = st.reduction(dec.d, shrink);
            }
        }
        // Candidates are in lexicographic order, so the first maximum wins ties.
        std::size_t best = 0;
        for (std::size_t c = 1; c < candidates.size(); ++c) {
            if (gain[c] > gain[best]) {
                best = c;
            }
        }
        dec.predicted_gain.push_back(gain[best] / static_cast<double>(codes.n()));
        CellStats st;
        st.accumulate(candidates[best], codes, resid, dec.d);
        apply_means(dec, candidates[best], st, codes, resid, shrink);
    }
    return dec;
}

void pairwise_decode_row(const PairwiseDecoder& dec, std::span<const code_t> codes, float* out,
                         UnseenCounter* unseen) {
    std::fill_n(out, dec.d, 0.0F);
    for (std::size_t s = 0; s < dec.steps(); ++s) {
        const auto [i, j] = dec.pairs[s];
        if (i >= codes.size() || j >= codes.size() || codes[i] >= dec.k || codes[j] >= dec.k) {
            throw FormatError("pairwise decoder: code row too short or code out of range");
        }
        const std::size_t c = dec.cell(s, codes);
        if (unseen && !dec.seen[s][c]) {
            ++unseen->count;
        }
        const float* e = dec.codebooks[s].row(c).data();
        for (std::size_t t = 0; t < dec.d; ++t) {
            out[t] += e[t];
        }
    }
}

VectorSet pairwise_decode(const PairwiseDecoder& dec, const CodeArray& codes,
                          UnseenCounter* unseen) {
    VectorSet out(codes.n(), dec.d);
    for (std::size_t i = 0; i < codes.n(); ++i) {
        pairwise_decode_row(dec, codes.row(i), out.row(i).data(), unseen);
    }
    return out;
}

std::vector<std::uint8_t> serialize_pairwise(const PairwiseDecoder& dec) {
    BinaryWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kPairwiseMagic.data()),
                 kPairwiseMagic.size()});
    w.put<std::uint32_t>(kPairwiseVersion);
    w.put<std::uint64_t>(dec.k);
    w.put<std::uint64_t>(dec.d);
    w.put<std::uint64_t>(dec.steps());
    for (std::size_t s = 0; s < dec.steps(); ++s) {
        w.put<std::uint32_t>(dec.pairs[s].first);
        w.put<std::uint32_t>(dec.pairs[s].second);
        w.put_raw<float>(dec.codebooks[s].entries());
        w.put_raw<std::uint8_t>(dec.seen[s]);
    }
    w.put_array<double>(dec.step_mse);
    w.put_array<double>(dec.predicted_gain);
    return w.take();
}

PairwiseDecoder deserialize_pairwise(std::span<const std::uint8_t> bytes) {
    BinaryReader r(bytes);
    r.expect_magic(kPairwiseMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kPairwiseVersion) {
        throw FormatError("unsupported pairwise decoder version " + std::to_string(version));
    }
    PairwiseDecoder dec;
    dec.k = r.get<std::uint64_t>();
    dec.d = r.get<std::uint64_t>();
    const auto steps = r.get<std::uint64_t>();
    if (dec.k > (1U << 16) || dec.d > (1U << 16) || steps > 4096) {
        throw FormatError("implausible pairwise decoder shape");
    }
    for (std::size_t s = 0; s < steps; ++s) {
        const auto i = r.get<std::uint32_t>(), j = r.get<std::uint32_t>();
        if (i > j) {
            throw FormatError("pairwise decoder pair is not normalized");
        }
        const CodePair p{i, j};
        const std::size_t cells = cell_count(p, dec.k);
        dec.pairs.push_back(p);
        dec.codebooks.emplace_back(cells, dec.d, r.get_raw<float>(cells * dec.d));
        dec.seen.push_back(r.get_raw<std::uint8_t>(cells));
    }
    dec.step_mse = r.get_array<double>(steps + 1);
    dec.predicted_gain = r.get_array<double>(steps);
    if (!r.at_end()) {
        throw FormatError("trailing bytes after pairwise decoder");
    }
    return dec;
}

} // namespace qinco
