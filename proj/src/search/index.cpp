#include <qinco/search/index.hpp>

#include <qinco/baseline/kmeans.hpp>
#include <qinco/util/binary_io.hpp>
#include <qinco/util/kernels.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace qinco {

namespace {

constexpr std::string_view kIndexMagic = "QIDX";
constexpr std::uint32_t kIndexVersion = 1;

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Held-out MSE of the pairwise refinement, every tenth row left out of the fit.
// Large values damp the refinement towards the plain centroid + AQ
// reconstruction when the pairs only fit noise.
double pick_pair_shrink(const CodeArray& ext, const VectorSet& resid, std::size_t m_prime) {
    const std::size_t n = ext.n(), d = resid.d();
    if (n < 100) {
        return 0.0;
    }
    std::vector<code_t> fit_codes, out_codes;
    std::vector<float> fit_x, out_x;
    for (std::size_t i = 0; i < n; ++i) {
        auto& codes = i % 10 == 9 ? out_codes : fit_codes;
        auto& x = i % 10 == 9 ? out_x : fit_x;
        codes.insert(codes.end(), ext.row(i).begin(), ext.row(i).end());
        x.insert(x.end(), resid.row(i).begin(), resid.row(i).end());
    }
    const std::size_t n_out = n / 10, n_fit = n - n_out;
    const CodeArray fc(n_fit, ext.m(), ext.k(), std::move(fit_codes));
    const CodeArray oc(n_out, ext.m(), ext.k(), std::move(out_codes));
    const VectorSet fx(n_fit, d, std::move(fit_x)), ox(n_out, d, std::move(out_x));
    double best = 0.0, best_mse = std::numeric_limits<double>::infinity();
    for (double shrink : {0.0, 2.0, 8.0, 32.0, 128.0, 512.0}) {
        const auto dec = select_pairs_greedy(fc, fx, m_prime, shrink);
        const auto rec = pairwise_decode(dec, oc);
        double sse = 0.0;
        for (std::size_t i = 0; i < ox.n(); ++i) {
            sse += squared_distance(ox.row(i).data(), rec.row(i).data(), d);
        }
        if (sse < best_mse) {
            best_mse = sse;
            best = shrink;
        }
    }
    return best;
}

struct Candidate {
    double dist;
    std::int64_t id;
    std::uint32_t bucket;
    std::uint32_t pos;
};

bool closer(const Candidate& a, const Candidate& b) {
    return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
}

void keep_best(std::vector<Candidate>& c, std::size_t n) {
    if (c.size() > n) {
        std::partial_sort(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(n), c.end(), closer);
        c.resize(n);
    } else {
        std::sort(c.begin(), c.end(), closer);
    }
}

double dot(const float* a, const float* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        s += static_cast<double>(a[j]) * b[j];
    }
    return s;
}

template <class T>
void put_vec(BinaryWriter& w, const std::vector<T>& v) {
    w.put_array<T>(v);
}

} // namespace

Codebook build_ivf(const VectorSet& train, std::size_t k_ivf, std::uint64_t seed,
                   std::size_t iters) {
    QINCO_CHECK(k_ivf >= 1 && k_ivf <= train.n(), "k_ivf must be in [1, n_train]");
    return kmeans(train, k_ivf, iters, seed).centroids;
}

void SearchParams::validate(std::size_t k_ivf) const {
    QINCO_CHECK(n_probe >= 1 && n_probe <= k_ivf, "n_probe must be in [1, K_IVF]");
    QINCO_CHECK(topk >= 1, "topk must be >= 1");
    QINCO_CHECK(topk <= n_short_pairs && n_short_pairs <= n_short_aq,
                "need topk <= n_short_pairs <= n_short_aq");
}

StageTimes& StageTimes::operator+=(const StageTimes& o) {
    probe += o.probe;
    aq += o.aq;
    pairwise += o.pairwise;
    decode += o.decode;
    return *this;
}

IvfIndex IvfIndex::train(const CompiledModel& model, std::uint64_t model_hash,
                         const VectorSet& train, const IndexOptions& opts) {
    const auto& cfg = model.config();
    QINCO_CHECK(model.ivf_centroids().has_value(), "index needs a model with IVF centroids");
    QINCO_CHECK(train.n() >= 1 && train.d() == cfg.d, "training vectors do not match the model");
    IvfIndex idx;
    idx.d_ = cfg.d;
    idx.m_ = cfg.m;
    idx.k_ = cfg.k;
    idx.a_ = opts.a ? opts.a : cfg.a_eval;
    idx.b_ = opts.b ? opts.b : cfg.b_eval;
    idx.model_hash_ = model_hash;
    idx.centroids_ = *model.ivf_centroids();
    idx.quantize_norms_ = opts.quantize_norms;
    idx.buckets_.resize(idx.centroids_.k());

    const auto enc = encode_beam(model, train, idx.a_, idx.b_);
    VectorSet resid(train.n(), idx.d_);
    for (std::size_t i = 0; i < train.n(); ++i) {
        const auto c = idx.centroids_.row(enc.buckets[i]);
        for (std::size_t j = 0; j < idx.d_; ++j) {
            resid.row(i)[j] = train.row(i)[j] - c[j];
        }
    }
    idx.aq_ = fit_aq_ls(enc.codes, resid, opts.aq_ridge);
    idx.ivf_codes_ = quantize_ivf_centroids(idx.centroids_, opts.m_tilde, cfg.k, opts.ivf_target,
                                            opts.seed);
    // The pairwise steps refine the centroid + AQ reconstruction; the folded
    // centroid codes only serve as pairing partners.
    const auto recon = aq_decode(idx.aq_, enc.codes);
    float lo = std::numeric_limits<float>::max(), hi = 0.0F;
    std::vector<float> x(idx.d_);
    for (std::size_t i = 0; i < train.n(); ++i) {
        const auto c = idx.centroids_.row(enc.buckets[i]);
        for (std::size_t j = 0; j < idx.d_; ++j) {
            x[j] = c[j] + recon.row(i)[j];
            resid.row(i)[j] = train.row(i)[j] - x[j];
        }
        const auto nrm = static_cast<float>(squared_norm(x.data(), idx.d_));
        lo = std::min(lo, nrm);
        hi = std::max(hi, nrm);
    }
    const auto ext = extend_codes(enc.codes, enc.buckets, idx.ivf_codes_);
    const std::size_t m_prime = opts.m_prime ? opts.m_prime : 2 * cfg.m;
    idx.pair_shrink_ =
        opts.pair_shrink >= 0.0 ? opts.pair_shrink : pick_pair_shrink(ext, resid, m_prime);
    idx.pairwise_ = select_pairs_greedy(ext, resid, m_prime, idx.pair_shrink_);
    idx.norm_lo_ = lo;
    idx.norm_hi_ = std::max(hi, lo);
    return idx;
}

void IvfIndex::add(const CompiledModel& model, const VectorSet& x,
                   std::span<const std::int64_t> ids) {
    QINCO_CHECK(ids.size() == x.n(), "one id per vector required");
    if (x.n() == 0) {
        return;
    }
    QINCO_CHECK(x.d() == d_, "vector dimension does not match the index");
    QINCO_CHECK(model.config().m == m_ && model.config().k == k_, "model does not match index");
    {
        std::unordered_set<std::int64_t> batch;
        for (auto id : ids) {
            if (ids_.count(id) || !batch.insert(id).second) {
                throw ConfigError("duplicate id " + std::to_string(id));
            }
        }
    }
    const auto enc = encode_beam(model, x, a_, b_);
    const auto recon = aq_decode(aq_, enc.codes);
    std::vector<float> full(d_);
    for (std::size_t i = 0; i < x.n(); ++i) {
        auto& bk = buckets_[enc.buckets[i]];
        bk.ids.push_back(ids[i]);
        const auto row = enc.codes.row(i);
        bk.codes.insert(bk.codes.end(), row.begin(), row.end());
        const auto c = centroids_.row(enc.buckets[i]);
        for (std::size_t j = 0; j < d_; ++j) {
            full[j] = c[j] + recon.row(i)[j];
        }
        const auto nrm = static_cast<float>(squared_norm(full.data(), d_));
        bk.norms.push_back(nrm);
        if (quantize_norms_) {
            const float span = norm_hi_ - norm_lo_;
            const float t = span > 0.0F ? (nrm - norm_lo_) / span : 0.0F;
            bk.qnorms.push_back(
                static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0F, 1.0F) * 255.0F)));
        }
        ids_.insert(ids[i]);
    }
}

double IvfIndex::stored_norm(const Bucket& b, std::size_t pos) const {
    if (!quantize_norms_) {
        return b.norms[pos];
    }
    return norm_lo_ + (norm_hi_ - norm_lo_) * (static_cast<double>(b.qnorms[pos]) / 255.0);
}

double IvfIndex::aq_distance(std::span<const float> q, std::size_t b, std::size_t pos) const {
    const auto& bk = buckets_[b];
    double t = dot(q.data(), centroids_.row(b).data(), d_);
    for (std::size_t s = 0; s < m_; ++s) {
        t += dot(q.data(), aq_.codebooks[s].row(bk.codes[pos * m_ + s]).data(), d_);
    }
    return squared_norm(q.data(), d_) - 2.0 * t + stored_norm(bk, pos);
}

double IvfIndex::aq_direct_distance(std::span<const float> q, std::size_t b,
                                    std::size_t pos) const {
    const auto& bk = buckets_[b];
    std::vector<double> x(d_);
    for (std::size_t j = 0; j < d_; ++j) {
        x[j] = centroids_.row(b)[j];
    }
    for (std::size_t s = 0; s < m_; ++s) {
        const auto e = aq_.codebooks[s].row(bk.codes[pos * m_ + s]);
        for (std::size_t j = 0; j < d_; ++j) {
            x[j] += e[j];
        }
    }
    double dist = 0.0;
    for (std::size_t j = 0; j < d_; ++j) {
        const double t = q[j] - x[j];
        dist += t * t;
    }
    return dist;
}

std::vector<Neighbor> IvfIndex::query(const CompiledModel& model, std::span<const float> q,
                                      const SearchParams& params, QueryStats* stats) const {
    params.validate(k_ivf());
    QINCO_CHECK(q.size() == d_, "query dimension does not match the index");
    QueryStats local;
    QueryStats& st = stats ? *stats : local;
    st = QueryStats{};

    // Stage 0: probe the nearest centroids.
    auto t0 = Clock::now();
    std::vector<Candidate> probes(k_ivf());
    for (std::size_t b = 0; b < k_ivf(); ++b) {
        probes[b] = {squared_distance(q.data(), centroids_.row(b).data(), d_),
                     static_cast<std::int64_t>(b), static_cast<std::uint32_t>(b), 0};
    }
    keep_best(probes, params.n_probe);
    st.seconds.probe = since(t0);

    // Stage 1: AQ lookup tables, T_m[j] = <q, C_m[j]>.
    t0 = Clock::now();
    std::vector<double> lut(m_ * k_);
    for (std::size_t s = 0; s < m_; ++s) {
        for (std::size_t j = 0; j < k_; ++j) {
            lut[s * k_ + j] = dot(q.data(), aq_.codebooks[s].row(j).data(), d_);
        }
    }
    const double qn = squared_norm(q.data(), d_);
    std::vector<Candidate> cands;
    for (const auto& p : probes) {
        const auto& bk = buckets_[p.bucket];
        const double tc = dot(q.data(), centroids_.row(p.bucket).data(), d_);
        for (std::size_t i = 0; i < bk.ids.size(); ++i) {
            double t = tc;
            const code_t* code = bk.codes.data() + i * m_;
            for (std::size_t s = 0; s < m_; ++s) {
                t += lut[s * k_ + code[s]];
            }
            cands.push_back({qn - 2.0 * t + stored_norm(bk, i), bk.ids[i], p.bucket,
                             static_cast<std::uint32_t>(i)});
        }
    }
    st.scanned = cands.size();
    keep_best(cands, params.n_short_aq);
    st.seconds.aq = since(t0);
    for (const auto& c : cands) st.aq_shortlist.push_back(c.id);

    // Stage 2: centroid + AQ reconstruction refined by the pairwise decoder over
    // the codes extended with the folded centroid codes.
    t0 = Clock::now();
    if (params.skip_pairwise) {
        if (cands.size() > params.n_short_pairs) cands.resize(params.n_short_pairs);
    } else {
        std::vector<code_t> ext(m_ + ivf_codes_.m_tilde());
        std::vector<float> rec(d_), pw(d_);
        UnseenCounter unseen;
        for (auto& c : cands) {
            const auto& bk = buckets_[c.bucket];
            const code_t* code = bk.codes.data() + c.pos * m_;
            std::copy_n(code, m_, ext.begin());
            const auto t = ivf_codes_.table.row(c.bucket);
            std::copy(t.begin(), t.end(), ext.begin() + static_cast<std::ptrdiff_t>(m_));
            pairwise_decode_row(pairwise_, ext, pw.data(), &unseen);
            const auto cent = centroids_.row(c.bucket);
            for (std::size_t j = 0; j < d_; ++j) {
                float v = 0.0F;
                for (std::size_t s = 0; s < m_; ++s) v += aq_.codebooks[s].row(code[s])[j];
                rec[j] = cent[j] + v + pw[j];
            }
            c.dist = squared_distance(q.data(), rec.data(), d_);
        }
        st.unseen_cells = unseen.count;
        keep_best(cands, params.n_short_pairs);
    }
    st.seconds.pairwise = since(t0);
    for (const auto& c : cands) st.pair_shortlist.push_back(c.id);

    // Stage 3: full QINCo2 decoding.
    t0 = Clock::now();
    CodeArray codes(cands.size(), m_ + 1, std::max(k_, k_ivf()));
    for (std::size_t r = 0; r < cands.size(); ++r) {
        const auto& c = cands[r];
        codes(r, 0) = c.bucket;
        std::copy_n(buckets_[c.bucket].codes.data() + c.pos * m_, m_, codes.row(r).begin() + 1);
    }
    const auto recon = decode(model, codes);
    for (std::size_t r = 0; r < cands.size(); ++r) {
        cands[r].dist = squared_distance(q.data(), recon.row(r).data(), d_);
    }
    keep_best(cands, params.topk);
    st.seconds.decode = since(t0);

    std::vector<Neighbor> out;
    for (const auto& c : cands) out.push_back({c.id, c.dist});
    return out;
}

CodeArray IvfIndex::stored_codes(std::vector<std::int64_t>* ids) const {
    CodeArray out(size(), m_ + 1, std::max(k_, k_ivf()));
    if (ids) ids->clear();
    std::size_t r = 0;
    for (std::size_t b = 0; b < buckets_.size(); ++b) {
        const auto& bk = buckets_[b];
        for (std::size_t i = 0; i < bk.ids.size(); ++i, ++r) {
            out(r, 0) = static_cast<code_t>(b);
            std::copy_n(bk.codes.data() + i * m_, m_, out.row(r).begin() + 1);
            if (ids) ids->push_back(bk.ids[i]);
        }
    }
    return out;
}

bool operator==(const IvfIndex& a, const IvfIndex& b) {
    return a.d_ == b.d_ && a.m_ == b.m_ && a.k_ == b.k_ && a.a_ == b.a_ && a.b_ == b.b_ &&
           a.model_hash_ == b.model_hash_ && a.centroids_ == b.centroids_ && a.aq_ == b.aq_ &&
           a.pairwise_ == b.pairwise_ && a.ivf_codes_ == b.ivf_codes_ &&
           a.quantize_norms_ == b.quantize_norms_ && a.norm_lo_ == b.norm_lo_ &&
           a.norm_hi_ == b.norm_hi_ && a.pair_shrink_ == b.pair_shrink_ &&
           a.buckets_ == b.buckets_;
}

std::vector<std::uint8_t> IvfIndex::serialize() const {
    BinaryWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kIndexMagic.data()), kIndexMagic.size()});
    w.put<std::uint32_t>(kIndexVersion);
    w.put<std::uint64_t>(model_hash_);
    for (std::size_t v : {d_, m_, k_, a_, b_, centroids_.k()}) {
        w.put<std::uint64_t>(v);
    }
    w.put_raw<float>(centroids_.entries());
    put_vec(w, serialize_aq(aq_));
    put_vec(w, serialize_pairwise(pairwise_));
    put_vec(w, serialize_ivf_codes(ivf_codes_));
    w.put<std::uint8_t>(quantize_norms_ ? 1 : 0);
    w.put<float>(norm_lo_);
    w.put<float>(norm_hi_);
    w.put<double>(pair_shrink_);
    for (const auto& bk : buckets_) {
        put_vec(w, bk.ids);
        w.put_raw<code_t>(bk.codes);
        w.put_raw<float>(bk.norms);
        w.put_raw<std::uint8_t>(bk.qnorms);
    }
    return w.take();
}

IvfIndex IvfIndex::deserialize(std::span<const std::uint8_t> bytes) {
    BinaryReader r(bytes);
    r.expect_magic(kIndexMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kIndexVersion) {
        throw FormatError("unsupported index version " + std::to_string(version));
    }
    IvfIndex idx;
    idx.model_hash_ = r.get<std::uint64_t>();
    idx.d_ = r.get<std::uint64_t>();
    idx.m_ = r.get<std::uint64_t>();
    idx.k_ = r.get<std::uint64_t>();
    idx.a_ = r.get<std::uint64_t>();
    idx.b_ = r.get<std::uint64_t>();
    const auto k_ivf = r.get<std::uint64_t>();
    if (idx.d_ > (1U << 16) || idx.m_ > 4096 || idx.k_ > (1U << 20) || k_ivf > (1U << 24)) {
        throw FormatError("implausible index header");
    }
    idx.centroids_ = Codebook(k_ivf, idx.d_, r.get_raw<float>(k_ivf * idx.d_));
    idx.aq_ = deserialize_aq(r.get_array<std::uint8_t>());
    idx.pairwise_ = deserialize_pairwise(r.get_array<std::uint8_t>());
    idx.ivf_codes_ = deserialize_ivf_codes(r.get_array<std::uint8_t>());
    idx.quantize_norms_ = r.get<std::uint8_t>() != 0;
    idx.norm_lo_ = r.get<float>();
    idx.norm_hi_ = r.get<float>();
    idx.pair_shrink_ = r.get<double>();
    idx.buckets_.resize(k_ivf);
    for (auto& bk : idx.buckets_) {
        bk.ids = r.get_array<std::int64_t>();
        const std::size_t n = bk.ids.size();
        bk.codes = r.get_raw<code_t>(n * idx.m_);
        bk.norms = r.get_raw<float>(n);
        bk.qnorms = r.get_raw<std::uint8_t>(idx.quantize_norms_ ? n : 0);
        for (auto id : bk.ids) {
            if (!idx.ids_.insert(id).second) {
                throw FormatError("duplicate id " + std::to_string(id) + " in index file");
            }
        }
        for (auto c : bk.codes) {
            if (c >= idx.k_) {
                throw FormatError("stored code out of range");
            }
        }
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after index");
    }
    if (idx.aq_.m() != idx.m_ || idx.ivf_codes_.table.n() != k_ivf) {
        throw FormatError("index decoders do not match its header");
    }
    return idx;
}

void save_index(const std::filesystem::path& path, const IvfIndex& index) {
    write_file_bytes(path, index.serialize());
}

IvfIndex load_index(const std::filesystem::path& path, std::uint64_t expected_model_hash) {
    auto idx = IvfIndex::deserialize(read_file_bytes(path));
    if (idx.model_hash() != expected_model_hash) {
        throw ConfigError("index was built for a different model");
    }
    return idx;
}

SearchResults search(const IvfIndex& index, const CompiledModel& model, const VectorSet& queries,
                     const SearchParams& params) {
    params.validate(index.k_ivf());
    QINCO_CHECK(queries.n() == 0 || queries.d() == index.d(), "query dimension mismatch");
    const std::size_t nq = queries.n();
    SearchResults res;
    res.topk = params.topk;
    res.neighbors.assign(nq * params.topk, Neighbor{});
    std::vector<QueryStats> stats(nq);
    const auto t0 = Clock::now();
#pragma omp parallel for schedule(dynamic, 1)
    for (std::int64_t qi = 0; qi < static_cast<std::int64_t>(nq); ++qi) {
        const auto i = static_cast<std::size_t>(qi);
        const auto found = index.query(model, queries.row(i), params, &stats[i]);
        std::copy(found.begin(), found.end(), res.neighbors.begin() + i * params.topk);
        stats[i].aq_shortlist.clear();
        stats[i].pair_shortlist.clear();
    }
    res.wall_seconds = since(t0);
    for (const auto& s : stats) {
        res.seconds += s.seconds;
        res.unseen_cells += s.unseen_cells;
    }
    return res;
}

std::vector<Neighbor> exhaustive_scan(std::span<const float> q, const VectorSet& recon,
                                      std::span<const std::int64_t> ids, std::size_t topk) {
    QINCO_CHECK(ids.size() == recon.n(), "one id per reconstruction required");
    std::vector<Candidate> c(recon.n());
    for (std::size_t i = 0; i < recon.n(); ++i) {
        c[i] = {squared_distance(q.data(), recon.row(i).data(), recon.d()), ids[i], 0, 0};
    }
    keep_best(c, topk);
    std::vector<Neighbor> out;
    for (const auto& x : c) out.push_back({x.id, x.dist});
    return out;
}

} // namespace qinco
