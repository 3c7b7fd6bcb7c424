#include <qinco/cli/cli.hpp>

#include <qinco/data/dataset.hpp>
#include <qinco/data/vecs_io.hpp>
#include <qinco/model/train.hpp>
#include <qinco/search/eval.hpp>
#include <qinco/util/binary_io.hpp>

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <set>
#include <sstream>

namespace qinco::cli {

namespace {

using Json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex << std::setw(16) << std::setfill('0') << v;
    return s.str();
}

// ---------------------------------------------------------------------------
// Options per command

struct Global {
    int threads = 0;
    std::string config;
    std::string log_file;
    bool quiet = false;
};

struct SynthOpts {
    std::uint64_t seed = 7;
    std::size_t n = 0, d = 32, components = 256;
    double spread = 0.1;
    std::vector<std::size_t> split;
    std::vector<std::string> names{"train", "database", "queries"};
    std::string out;
};

struct GtOpts {
    std::string db, queries, out;
    std::size_t k = 100;
};

struct TrainOpts {
    std::string train, val, out, metrics, preset;
    std::size_t max_train = 0, n_val = 0;
    std::size_t m = 8, k = 256, d_e = 0, d_h = 0, depth = 0, ls = 0, ls_d_h = 128;
    std::size_t a_train = 16, b_train = 32, a_eval = 32, b_eval = 64;
    std::size_t k_ivf = 0, ivf_iters = 25;
    std::size_t init_iters = 10;
    double init_noise = 0.025;
    TrainOptions t;
};

struct EncodeOpts {
    std::string model, input, out;
    std::size_t a = 0, b = 0;
};

struct DecodeOpts {
    std::string model, codes, out;
    bool normalized = false;
};

struct EvalOpts {
    std::string model, input, recon, db, queries, gt, out;
    std::size_t a = 0, b = 0;
    bool raw = false;
};

struct IndexOpts {
    std::string model, train, db, out;
    std::size_t max_train = 0;
    IndexOptions idx;
};

struct SearchOpts {
    std::string model, index, queries, gt, out, csv, results;
    std::vector<std::string> settings;
    std::size_t topk = 0;
    bool skip_pairwise = false, latency = false;
};

struct SweepOpts {
    std::vector<std::string> inputs;
    std::string x = "qps", y = "r1", out;
    bool x_low = false, y_low = false;
};

// ---------------------------------------------------------------------------
// Logging and provenance

class Logger {
public:
    Logger(std::ostream& err, const Global& g) : err_(err), quiet_(g.quiet) {
        if (!g.log_file.empty()) {
            file_ = std::make_unique<std::ofstream>(g.log_file, std::ios::app);
            if (!*file_) throw ConfigError("cannot open log file " + g.log_file);
        }
    }

    void log(const std::string& level, const std::string& event, Json fields = Json::object()) {
        Json line;
        line["level"] = level;
        line["event"] = event;
        line["elapsed"] = since(start_);
        for (auto& [k, v] : fields.items()) line[k] = v;
        const auto s = line.dump();
        if (file_) *file_ << s << '\n' << std::flush;
        if (!quiet_ || level == "error") err_ << s << '\n';
    }

private:
    std::ostream& err_;
    bool quiet_;
    std::unique_ptr<std::ofstream> file_;
    Clock::time_point start_ = Clock::now();
};

struct Context {
    Provenance prov;
    Logger* log = nullptr;
};

void stamp(Json& j, const Provenance& p) {
    j["config_hash"] = hex64(p.config_hash);
    j["version"] = p.version;
}

/// Standard vector formats cannot carry provenance; it goes to PATH.json.
void write_sidecar(const std::filesystem::path& path, const Context& ctx, Json extra = {}) {
    Json j;
    j["file"] = path.filename().string();
    j["command"] = ctx.prov.command;
    stamp(j, ctx.prov);
    if (extra.is_object()) {
        for (auto& [k, v] : extra.items()) j[k] = v;
    }
    std::ofstream f(path.string() + ".json");
    if (!f) throw ConfigError("cannot write " + path.string() + ".json");
    f << j.dump(2) << '\n';
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw ConfigError("cannot write " + path);
    f << text;
}

// ---------------------------------------------------------------------------
// Data and model helpers

VectorSet load_vectors(const std::string& path, std::size_t limit = 0) {
    auto x = read_vectors(path, limit ? std::optional<std::size_t>(limit) : std::nullopt);
    for (std::size_t i = 0; i < x.n(); ++i) {
        for (float v : x.row(i)) {
            if (!std::isfinite(v)) {
                throw FormatError(path + ": non-finite value in vector " + std::to_string(i));
            }
        }
    }
    return x;
}

struct LoadedModel {
    QincoModel model;
    std::unique_ptr<CompiledModel> compiled;
    std::uint64_t hash = 0;
};

LoadedModel load_model_artifact(const std::string& path) {
    LoadedModel m;
    m.model = deserialize_model(read_artifact(path, "model"));
    m.compiled = std::make_unique<CompiledModel>(m.model);
    m.hash = model_hash(m.model);
    return m;
}

VectorSet normalized(const QincoModel& model, const VectorSet& x) {
    if (x.n() == 0) return VectorSet(0, model.config.d);
    QINCO_CHECK(x.d() == model.config.d, "input dimension " + std::to_string(x.d()) +
                                             " does not match the model (" +
                                             std::to_string(model.config.d) + ")");
    return apply_norm(x, model.norm, NormDirection::forward);
}

/// Codes as stored on disk: a leading bucket column when the model has IVF.
CodeArray storage_codes(const CompiledModel& cm, const EncodeResult& enc) {
    if (cm.ivf_centroids()) {
        return with_bucket_column(enc.codes, enc.buckets, cm.ivf_centroids()->k());
    }
    return enc.codes;
}

std::size_t or_default(std::size_t v, std::size_t fallback) { return v ? v : fallback; }

std::vector<std::size_t> recall_ranks(std::size_t topk) {
    std::vector<std::size_t> r;
    for (std::size_t v : {1, 10, 100}) {
        if (v <= topk) r.push_back(v);
    }
    return r;
}

void put_recall(Json& j, const RecallReport& rep) {
    for (std::size_t i = 0; i < rep.ranks.size(); ++i) {
        j["r" + std::to_string(rep.ranks[i])] = rep.recall[i];
    }
}

SearchParams parse_setting(const std::string& s, std::size_t topk, bool skip) {
    SearchParams p;
    std::vector<std::size_t> v;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ':')) {
        try {
            std::size_t used = 0;
            v.push_back(std::stoull(part, &used));
            if (used != part.size()) throw std::invalid_argument(part);
        } catch (const std::logic_error&) {
            throw ConfigError("bad setting '" + s + "', expected n_probe:n_short_aq:n_short_pairs");
        }
    }
    if (v.size() != 3) {
        throw ConfigError("bad setting '" + s + "', expected n_probe:n_short_aq:n_short_pairs");
    }
    p.n_probe = v[0];
    p.n_short_aq = v[1];
    p.n_short_pairs = v[2];
    p.topk = topk ? topk : std::min<std::size_t>(100, p.n_short_pairs);
    p.skip_pairwise = skip;
    return p;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_synth(const SynthOpts& o, Context& ctx) {
    QINCO_CHECK(o.n >= 1, "--n must be >= 1");
    const auto x = synth_gmm(o.seed, o.n, o.d, o.components, o.spread);
    Json meta{{"seed", o.seed}, {"n", o.n}, {"d", o.d}, {"components", o.components},
              {"spread", o.spread}};
    if (o.split.empty()) {
        write_fvecs(o.out, x);
        write_sidecar(o.out, ctx, meta);
        ctx.log->log("info", "synth", {{"out", o.out}, {"n", x.n()}});
        return kOk;
    }
    QINCO_CHECK(o.split.size() <= o.names.size(), "--split has more parts than --names");
    const auto parts = split(x, o.split, o.seed);
    for (std::size_t i = 0; i < o.split.size(); ++i) {
        const std::string path = o.out + "." + o.names[i] + ".fvecs";
        write_fvecs(path, parts.parts[i]);
        write_sidecar(path, ctx, meta);
        ctx.log->log("info", "synth", {{"out", path}, {"n", parts.parts[i].n()}});
    }
    return kOk;
}

int cmd_groundtruth(const GtOpts& o, Context& ctx) {
    const auto db = load_vectors(o.db);
    const auto q = load_vectors(o.queries);
    const auto t0 = Clock::now();
    const auto gt = compute_groundtruth(db, q, std::min(o.k, db.n()));
    write_ivecs(o.out, gt);
    write_sidecar(o.out, ctx, {{"k", gt.k}});
    ctx.log->log("info", "groundtruth", {{"queries", gt.n}, {"k", gt.k}, {"seconds", since(t0)}});
    return kOk;
}

int cmd_train(TrainOpts o, Context& ctx, std::ostream& out) {
    auto train_raw = load_vectors(o.train, o.max_train);
    QINCO_CHECK(train_raw.n() >= 1, "empty training file");
    VectorSet val_raw(0, train_raw.d());
    if (!o.val.empty()) {
        val_raw = load_vectors(o.val);
    } else if (o.n_val > 0) {
        QINCO_CHECK(o.n_val < train_raw.n(), "--n-val leaves no training vectors");
        auto parts = split(train_raw, {train_raw.n() - o.n_val, o.n_val}, o.t.seed);
        train_raw = std::move(parts.parts[0]);
        val_raw = std::move(parts.parts[1]);
    }

    QincoConfig cfg;
    cfg.d = train_raw.d();
    cfg.m = o.m;
    cfg.k = o.k;
    if (!o.preset.empty()) cfg = apply_preset(cfg, o.preset);
    if (o.d_e) cfg.d_e = o.d_e;
    if (o.d_h) cfg.d_h = o.d_h;
    if (o.depth) cfg.depth = o.depth;
    cfg.preselect_depth = o.ls;
    cfg.preselect_d_h = o.ls_d_h;
    cfg.a_train = o.a_train;
    cfg.b_train = o.b_train;
    cfg.a_eval = o.a_eval;
    cfg.b_eval = o.b_eval;
    cfg.ivf_enabled = o.k_ivf > 0;
    cfg.validate();

    const auto t0 = Clock::now();
    const auto norm = fit_norm(train_raw);
    const auto train_x = apply_norm(train_raw, norm, NormDirection::forward);
    const auto val_x = val_raw.n() ? apply_norm(val_raw, norm, NormDirection::forward)
                                   : VectorSet(0, cfg.d);
    std::optional<Codebook> cents;
    if (cfg.ivf_enabled) {
        cents = build_ivf(train_x, o.k_ivf, o.t.seed, o.ivf_iters);
        ctx.log->log("info", "ivf", {{"k_ivf", o.k_ivf}, {"seconds", since(t0)}});
    }
    auto model = init_from_rq(cfg, train_x, o.t.seed, {o.init_iters, o.init_noise}, cents);
    model.norm = norm;
    ctx.log->log("info", "init", {{"seconds", since(t0)}, {"parameters", model.parameter_count()}});

    std::unique_ptr<std::ofstream> metrics;
    if (!o.metrics.empty()) {
        metrics = std::make_unique<std::ofstream>(o.metrics);
        if (!*metrics) throw ConfigError("cannot write " + o.metrics);
    }
    o.t.on_epoch = [&](const EpochMetrics& e) {
        Json j{{"epoch", e.epoch},       {"train_loss", e.train_loss}, {"train_mse", e.train_mse},
               {"val_mse", e.val_mse},   {"lr", e.lr},                 {"resets", e.resets},
               {"seconds", e.seconds}};
        if (val_x.n() == 0) j["val_mse"] = nullptr;
        stamp(j, ctx.prov);
        if (metrics) *metrics << j.dump() << '\n' << std::flush;
        ctx.log->log("info", "epoch", j);
    };
    const auto res = train(model, train_x, val_x, o.t);
    write_artifact(o.out, "model", ctx.prov, serialize_model(model));

    Json summary{{"model", o.out},
                 {"model_hash", hex64(model_hash(model))},
                 {"epochs", res.epochs.size()},
                 {"init_val_mse", nullptr},
                 {"final_val_mse", nullptr}};
    if (val_x.n() > 0) {
        summary["init_val_mse"] = res.init_val_mse;
        summary["final_val_mse"] =
            res.epochs.empty() ? res.init_val_mse : res.epochs.back().val_mse;
    }
    stamp(summary, ctx.prov);
    out << summary.dump() << '\n';
    ctx.log->log("info", "train_done", {{"seconds", since(t0)}});
    return kOk;
}

int cmd_encode(const EncodeOpts& o, Context& ctx) {
    const auto m = load_model_artifact(o.model);
    const auto x = normalized(m.model, load_vectors(o.input));
    const auto& cfg = m.model.config;
    const auto t0 = Clock::now();
    const auto enc = encode_beam(*m.compiled, x, or_default(o.a, cfg.a_eval),
                                 or_default(o.b, cfg.b_eval));
    write_code_file(o.out, storage_codes(*m.compiled, enc), ctx.prov.config_hash);
    ctx.log->log("info", "encode", {{"n", x.n()}, {"seconds", since(t0)}});
    return kOk;
}

int cmd_decode(const DecodeOpts& o, Context& ctx) {
    const auto m = load_model_artifact(o.model);
    const auto codes = read_code_file(o.codes);
    VectorSet xhat = codes.n() ? decode(*m.compiled, codes) : VectorSet(0, m.model.config.d);
    if (!o.normalized && xhat.n()) {
        xhat = apply_norm(xhat, m.model.norm, NormDirection::inverse);
    }
    write_fvecs(o.out, xhat);
    write_sidecar(o.out, ctx, {{"space", o.normalized ? "normalized" : "raw"}});
    ctx.log->log("info", "decode", {{"n", xhat.n()}});
    return kOk;
}

int cmd_eval(const EvalOpts& o, Context& ctx, std::ostream& out) {
    const auto m = load_model_artifact(o.model);
    const auto& cfg = m.model.config;
    const std::size_t a = or_default(o.a, cfg.a_eval), b = or_default(o.b, cfg.b_eval);
    const double scale2 = static_cast<double>(m.model.norm.scale) * m.model.norm.scale;
    Json j{{"command", "eval"}, {"model_hash", hex64(m.hash)}, {"a", a}, {"b", b}};
    Json secs = Json::object();

    if (!o.input.empty()) {
        const auto raw = load_vectors(o.input);
        const auto t0 = Clock::now();
        double mse_norm = 0.0;
        if (!o.recon.empty()) {
            const auto rec = load_vectors(o.recon);
            QINCO_CHECK(rec.n() == raw.n(), "reconstruction count does not match the input");
            mse_norm = raw.n() ? eval_mse(raw, rec) / scale2 : 0.0;
        } else {
            const auto x = normalized(m.model, raw);
            mse_norm = x.n() ? eval_mse(*m.compiled, x, a, b) : 0.0;
        }
        secs["mse"] = since(t0);
        const double mse = o.raw ? mse_norm * scale2 : mse_norm;
        j["n"] = raw.n();
        j["space"] = o.raw ? "raw" : "normalized";
        j["mse"] = mse;
        j["mse_x1e4"] = mse * 1e4;
    }

    if (!o.db.empty() || !o.queries.empty() || !o.gt.empty()) {
        QINCO_CHECK(!o.db.empty() && !o.queries.empty() && !o.gt.empty(),
                    "recall needs --db, --queries and --gt together");
        const auto db = normalized(m.model, load_vectors(o.db));
        const auto q = normalized(m.model, load_vectors(o.queries));
        const auto gt = read_ivecs(o.gt);
        auto t0 = Clock::now();
        const auto enc = encode_beam(*m.compiled, db, a, b);
        secs["encode"] = since(t0);
        t0 = Clock::now();
        const auto recon = decode(*m.compiled, storage_codes(*m.compiled, enc));
        secs["decode"] = since(t0);
        std::vector<std::int64_t> ids(db.n());
        std::iota(ids.begin(), ids.end(), 0);
        const std::size_t topk = std::min<std::size_t>(100, db.n());
        SearchResults res;
        res.topk = topk;
        res.neighbors.assign(q.n() * topk, Neighbor{});
        t0 = Clock::now();
#pragma omp parallel for schedule(dynamic, 4)
        for (std::int64_t qi = 0; qi < static_cast<std::int64_t>(q.n()); ++qi) {
            const auto i = static_cast<std::size_t>(qi);
            const auto nn = exhaustive_scan(q.row(i), recon, ids, topk);
            std::copy(nn.begin(), nn.end(), res.neighbors.begin() + i * topk);
        }
        res.wall_seconds = since(t0);
        secs["scan"] = res.wall_seconds;
        const auto rep = eval_recall(res, gt, recall_ranks(topk));
        j["queries"] = rep.queries;
        put_recall(j, rep);
    }
    j["seconds"] = secs;
    stamp(j, ctx.prov);
    write_text(o.out, j.dump(2) + "\n", out);
    return kOk;
}

int cmd_build_index(const IndexOpts& o, Context& ctx) {
    const auto m = load_model_artifact(o.model);
    const auto train_x = normalized(m.model, load_vectors(o.train, o.max_train));
    const auto db = normalized(m.model, load_vectors(o.db));
    const auto t0 = Clock::now();
    auto idx = IvfIndex::train(*m.compiled, m.hash, train_x, o.idx);
    ctx.log->log("info", "index_decoders",
                 {{"seconds", since(t0)},
                  {"pairs", idx.pairwise().steps()},
                  {"pair_shrink", idx.pair_shrink()},
                  {"ivf_m_tilde", idx.ivf_codes().m_tilde()},
                  {"ivf_relative_mse", idx.ivf_codes().relative_mse}});
    std::vector<std::int64_t> ids(db.n());
    std::iota(ids.begin(), ids.end(), 0);
    idx.add(*m.compiled, db, ids);
    write_artifact(o.out, "index", ctx.prov, idx.serialize());
    ctx.log->log("info", "index_built", {{"n", idx.size()}, {"seconds", since(t0)}});
    return kOk;
}

int cmd_search(const SearchOpts& o, Context& ctx, std::ostream& out) {
    const auto m = load_model_artifact(o.model);
    const auto idx = IvfIndex::deserialize(read_artifact(o.index, "index"));
    if (idx.model_hash() != m.hash) {
        throw ConfigError("index " + o.index + " was built for a different model");
    }
    const auto q = normalized(m.model, load_vectors(o.queries));
    const auto gt = read_ivecs(o.gt);
    std::vector<std::string> settings = o.settings;
    if (settings.empty()) {
        const SearchParams d;
        settings.push_back(std::to_string(d.n_probe) + ":" + std::to_string(d.n_short_aq) + ":" +
                           std::to_string(d.n_short_pairs));
    }
    std::ostringstream jsonl, csv;
    csv << "setting,n_probe,n_short_aq,n_short_pairs,topk,r1,r10,r100,qps,wall_seconds\n";
    SearchResults last;
    for (const auto& s : settings) {
        const auto p = parse_setting(s, o.topk, o.skip_pairwise);
        p.validate(idx.k_ivf());
        auto res = search(idx, *m.compiled, q, p);
        const auto rep = eval_recall(res, gt, recall_ranks(p.topk));
        Json row{{"setting", s},          {"n_probe", p.n_probe},
                 {"n_short_aq", p.n_short_aq}, {"n_short_pairs", p.n_short_pairs},
                 {"topk", p.topk},        {"skip_pairwise", p.skip_pairwise},
                 {"queries", rep.queries}};
        put_recall(row, rep);
        row["unseen_cells"] = res.unseen_cells;
        row["qps"] = rep.qps;
        row["seconds"] = {{"wall", res.wall_seconds},
                          {"probe", res.seconds.probe},
                          {"aq", res.seconds.aq},
                          {"pairwise", res.seconds.pairwise},
                          {"decode", res.seconds.decode}};
        if (o.latency) {
            std::vector<double> lat(q.n());
            for (std::size_t i = 0; i < q.n(); ++i) {
                const auto t0 = Clock::now();
                idx.query(*m.compiled, q.row(i), p);
                lat[i] = since(t0) * 1e3;
            }
            std::sort(lat.begin(), lat.end());
            row["latency_ms"] = {
                {"mean", lat.empty() ? 0.0
                                     : std::accumulate(lat.begin(), lat.end(), 0.0) /
                                           static_cast<double>(lat.size())},
                {"p50", lat.empty() ? 0.0 : lat[lat.size() / 2]}};
        }
        stamp(row, ctx.prov);
        jsonl << row.dump() << '\n';
        auto rv = [&](std::size_t r) {
            return row.contains("r" + std::to_string(r))
                       ? std::to_string(row["r" + std::to_string(r)].get<double>())
                       : std::string();
        };
        csv << s << ',' << p.n_probe << ',' << p.n_short_aq << ',' << p.n_short_pairs << ','
            << p.topk << ',' << rv(1) << ',' << rv(10) << ',' << rv(100) << ',' << rep.qps << ','
            << res.wall_seconds << '\n';
        ctx.log->log("info", "search", row);
        last = std::move(res);
    }
    write_text(o.out, jsonl.str(), out);
    if (!o.csv.empty()) write_text(o.csv, csv.str(), out);
    if (!o.results.empty()) {
        IdTable ids{q.n(), last.topk, std::vector<std::int32_t>(q.n() * last.topk)};
        for (std::size_t i = 0; i < ids.ids.size(); ++i) {
            ids.ids[i] = static_cast<std::int32_t>(last.neighbors[i].id);
        }
        write_ivecs(o.results, ids);
        write_sidecar(o.results, ctx, {{"setting", settings.back()}});
    }
    return kOk;
}

Json json_at(const Json& row, const std::string& key) {
    std::string ptr = "/" + key;
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    const Json::json_pointer jp(ptr);
    if (!row.contains(jp) || !row.at(jp).is_number()) return Json();
    return row.at(jp);
}

int cmd_sweep_report(const SweepOpts& o, Context&, std::ostream& out) {
    std::vector<ParetoPoint> pts;
    for (const auto& path : o.inputs) {
        std::ifstream f(path);
        if (!f) throw FormatError("cannot open " + path);
        std::string line;
        std::size_t lineno = 0;
        // Accepts JSON-lines files and single (possibly pretty-printed) JSON documents.
        std::stringstream whole;
        whole << f.rdbuf();
        std::vector<Json> rows;
        try {
            rows.push_back(Json::parse(whole.str()));
        } catch (const Json::parse_error&) {
            whole.clear();
            whole.seekg(0);
            while (std::getline(whole, line)) {
                ++lineno;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                try {
                    rows.push_back(Json::parse(line));
                } catch (const Json::parse_error& e) {
                    throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
                }
            }
        }
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto x = json_at(rows[i], o.x), y = json_at(rows[i], o.y);
            if (x.is_null() || y.is_null()) {
                throw FormatError(path + ": row " + std::to_string(i + 1) + " lacks numeric '" +
                                  o.x + "' or '" + o.y + "'");
            }
            std::string label = rows[i].contains("setting") && rows[i]["setting"].is_string()
                                    ? rows[i]["setting"].get<std::string>()
                                    : std::to_string(i + 1);
            pts.push_back({std::filesystem::path(path).filename().string() + "#" + label,
                           x.get<double>(), y.get<double>()});
        }
    }
    const auto front = pareto_front(pts, !o.x_low, !o.y_low);
    std::vector<std::size_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::tie(pts[a].x, pts[a].y, pts[a].label) <
               std::tie(pts[b].x, pts[b].y, pts[b].label);
    });
    std::ostringstream csv;
    csv << std::setprecision(17) << "label," << o.x << ',' << o.y << ",pareto\n";
    for (auto i : order) {
        csv << pts[i].label << ',' << pts[i].x << ',' << pts[i].y << ',' << (front[i] ? 1 : 0)
            << '\n';
    }
    write_text(o.out, csv.str(), out);
    return kOk;
}

// ---------------------------------------------------------------------------
// Config file and argument plumbing

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

/// "key = value" lines; '#' and ';' start comments. Underscores in keys are
/// read as dashes.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::vector<std::pair<std::string, std::string>> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto c = line.find_first_of("#;");
        if (c != std::string::npos) line.resize(c);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        auto key = trim(line.substr(0, eq));
        std::replace(key.begin(), key.end(), '_', '-');
        auto value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
            value = value.substr(1, value.size() - 2);
        }
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        kv.emplace_back(key, value);
    }
    return kv;
}

std::string option_key(const std::string& arg) {
    if (arg.rfind("--", 0) != 0) return "";
    auto key = arg.substr(2);
    const auto eq = key.find('=');
    if (eq != std::string::npos) key.resize(eq);
    return key;
}

/// Hash of every resolved option of the command except thread count, config
/// path and logging.
std::uint64_t config_hash(const CLI::App& sub) {
    static const std::set<std::string> skip{"help", "threads", "config", "log-file", "quiet"};
    std::string canon = sub.get_name() + "\n";
    std::vector<std::pair<std::string, std::string>> items;
    for (const auto* opt : sub.get_options()) {
        const auto name = opt->get_lnames().empty() ? opt->get_name() : opt->get_lnames().front();
        if (skip.count(name)) continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += r + ",";
        } else {
            value = "default:" + opt->get_default_str();
        }
        items.emplace_back(name, value);
    }
    std::sort(items.begin(), items.end());
    for (const auto& [k, v] : items) canon += k + "=" + v + "\n";
    return fnv1a64(canon);
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Neural residual vector quantization and search", "qinco"};
    app.require_subcommand(1);
    app.fallthrough();
    app.option_defaults()->always_capture_default();

    Global g;
    app.add_option("--threads", g.threads, "Worker threads (0: OpenMP default)")
        ->check(CLI::NonNegativeNumber);
    app.add_option("--config", g.config, "key = value file; command-line flags take precedence");
    app.add_option("--log-file", g.log_file, "Append JSON-lines logs to this file");
    app.add_flag("--quiet", g.quiet, "Only errors on stderr");

    SynthOpts so;
    auto* synth = app.add_subcommand("synth", "Write a Gaussian-mixture sample as fvecs");
    synth->add_option("--seed", so.seed);
    synth->add_option("--n", so.n)->required();
    synth->add_option("--d", so.d);
    synth->add_option("--components", so.components);
    synth->add_option("--spread", so.spread);
    synth->add_option("--split", so.split, "Sizes of disjoint parts (comma separated)")
        ->delimiter(',');
    synth->add_option("--names", so.names, "Part names for --split")->delimiter(',');
    synth->add_option("--out", so.out, "Output file, or prefix with --split")->required();

    GtOpts go;
    auto* gt = app.add_subcommand("groundtruth", "Exact nearest neighbours as ivecs");
    gt->add_option("--db", go.db)->required();
    gt->add_option("--queries", go.queries)->required();
    gt->add_option("--k", go.k);
    gt->add_option("--out", go.out)->required();

    TrainOpts to;
    auto* tr = app.add_subcommand("train", "Initialize from RQ and train a model");
    tr->add_option("--train", to.train)->required();
    tr->add_option("--val", to.val, "Validation vectors (default: hold out --n-val)");
    tr->add_option("--n-val", to.n_val);
    tr->add_option("--max-train", to.max_train, "Use only the first N training vectors");
    tr->add_option("--out", to.out)->required();
    tr->add_option("--metrics", to.metrics, "Per-epoch JSON-lines file");
    tr->add_option("--preset", to.preset, "S, M or L")->check(CLI::IsMember({"S", "M", "L"}));
    tr->add_option("--m", to.m);
    tr->add_option("--k", to.k);
    tr->add_option("--de", to.d_e, "Embedding width (overrides preset)");
    tr->add_option("--dh", to.d_h, "Hidden width (overrides preset)");
    tr->add_option("--depth", to.depth, "Residual blocks L (overrides preset)");
    tr->add_option("--ls", to.ls, "Pre-selection network depth");
    tr->add_option("--ls-dh", to.ls_d_h);
    tr->add_option("--a-train", to.a_train);
    tr->add_option("--b-train", to.b_train);
    tr->add_option("--a-eval", to.a_eval);
    tr->add_option("--b-eval", to.b_eval);
    tr->add_option("--k-ivf", to.k_ivf, "Coarse buckets (0: no IVF)");
    tr->add_option("--ivf-iters", to.ivf_iters);
    tr->add_option("--init-iters", to.init_iters);
    tr->add_option("--init-noise", to.init_noise);
    tr->add_option("--epochs", to.t.epochs);
    tr->add_option("--samples-per-epoch", to.t.samples_per_epoch);
    tr->add_option("--batch-size", to.t.batch_size);
    tr->add_option("--lr", to.t.lr);
    tr->add_option("--min-lr-fraction", to.t.min_lr_fraction);
    tr->add_option("--warmup-steps", to.t.warmup_steps);
    tr->add_option("--weight-decay", to.t.weight_decay);
    tr->add_option("--grad-clip", to.t.grad_clip);
    tr->add_option("--reset-dead", to.t.reset_dead);
    tr->add_option("--detach-steps", to.t.detach_steps);
    tr->add_option("--aux-weight", to.t.aux_weight);
    tr->add_option("--shard-size", to.t.shard_size);
    tr->add_option("--seed", to.t.seed);

    EncodeOpts eo;
    auto* enc = app.add_subcommand("encode", "Encode vectors to a code file");
    enc->add_option("--model", eo.model)->required();
    enc->add_option("--input", eo.input)->required();
    enc->add_option("--out", eo.out)->required();
    enc->add_option("--a", eo.a, "Pre-selected candidates (0: model default)");
    enc->add_option("--b", eo.b, "Beam size (0: model default)");

    DecodeOpts dopt;
    auto* dec = app.add_subcommand("decode", "Decode a code file to fvecs");
    dec->add_option("--model", dopt.model)->required();
    dec->add_option("--codes", dopt.codes)->required();
    dec->add_option("--out", dopt.out)->required();
    dec->add_flag("--normalized", dopt.normalized, "Keep the model's normalized space");

    EvalOpts ev;
    auto* evc = app.add_subcommand("eval", "MSE and exhaustive-decode recall");
    evc->add_option("--model", ev.model)->required();
    evc->add_option("--input", ev.input, "Vectors for the MSE");
    evc->add_option("--recon", ev.recon, "Use these reconstructions of --input (raw space)");
    evc->add_option("--db", ev.db);
    evc->add_option("--queries", ev.queries);
    evc->add_option("--gt", ev.gt);
    evc->add_option("--a", ev.a);
    evc->add_option("--b", ev.b);
    evc->add_flag("--raw", ev.raw, "Report MSE in the input space instead of normalized");
    evc->add_option("--out", ev.out, "Metrics JSON (default stdout)");

    IndexOpts io;
    auto* bi = app.add_subcommand("build-index", "Fit shortlist decoders and index a database");
    bi->add_option("--model", io.model)->required();
    bi->add_option("--train", io.train, "Vectors for the AQ and pairwise decoders")->required();
    bi->add_option("--max-train", io.max_train);
    bi->add_option("--db", io.db)->required();
    bi->add_option("--out", io.out)->required();
    bi->add_option("--m-prime", io.idx.m_prime, "Pairwise steps (0: 2M)");
    bi->add_option("--m-tilde", io.idx.m_tilde, "Initial centroid RQ steps");
    bi->add_option("--ivf-target", io.idx.ivf_target);
    bi->add_option("--aq-ridge", io.idx.aq_ridge, "Ridge weight (negative: 1e-6 n)");
    bi->add_option("--pair-shrink", io.idx.pair_shrink,
                   "Pairwise cell-mean shrinkage (negative: pick on held-out rows)");
    bi->add_flag("--quantize-norms", io.idx.quantize_norms);
    bi->add_option("--a", io.idx.a);
    bi->add_option("--b", io.idx.b);
    bi->add_option("--seed", io.idx.seed);

    SearchOpts sopt;
    auto* se = app.add_subcommand("search", "Query an index, one report row per setting");
    se->add_option("--model", sopt.model)->required();
    se->add_option("--index", sopt.index)->required();
    se->add_option("--queries", sopt.queries)->required();
    se->add_option("--gt", sopt.gt)->required();
    se->add_option("--setting", sopt.settings, "n_probe:n_short_aq:n_short_pairs (repeatable)");
    se->add_option("--topk", sopt.topk, "Results per query (0: min(100, n_short_pairs))");
    se->add_flag("--skip-pairwise", sopt.skip_pairwise);
    se->add_flag("--latency", sopt.latency, "Also time queries one at a time");
    se->add_option("--out", sopt.out, "JSON-lines report (default stdout)");
    se->add_option("--csv", sopt.csv);
    se->add_option("--results", sopt.results, "ivecs of the last setting's ids");

    SweepOpts sw;
    auto* sr = app.add_subcommand("sweep-report", "Pareto front over metric files as CSV");
    sr->add_option("--input", sw.inputs)->required();
    sr->add_option("--x", sw.x, "Metric key (dots for nesting)");
    sr->add_option("--y", sw.y);
    sr->add_flag("--x-low", sw.x_low, "Lower x is better");
    sr->add_flag("--y-low", sw.y_low, "Lower y is better");
    sr->add_option("--out", sw.out, "CSV path (default stdout)");

    // Expand --config into arguments placed right after the command name,
    // dropping keys the command line sets itself.
    std::vector<std::string> argv = args;
    try {
        std::string cfg_path;
        std::set<std::string> given;
        std::size_t sub_pos = argv.size();
        for (std::size_t i = 0; i < argv.size(); ++i) {
            const auto key = option_key(argv[i]);
            if (!key.empty()) given.insert(key);
            if (argv[i] == "--config" && i + 1 < argv.size()) {
                cfg_path = argv[i + 1];
            } else if (argv[i].rfind("--config=", 0) == 0) {
                cfg_path = argv[i].substr(9);
            }
            if (sub_pos == argv.size() && argv[i].rfind("-", 0) != 0 &&
                app.get_subcommand_no_throw(argv[i]) != nullptr) {
                sub_pos = i;
            }
        }
        if (!cfg_path.empty()) {
            if (sub_pos == argv.size()) throw ConfigError("--config needs a command");
            auto* sub = app.get_subcommand(argv[sub_pos]);
            std::vector<std::string> injected;
            for (const auto& [key, value] : read_config_file(cfg_path)) {
                const CLI::Option* opt = sub->get_option_no_throw("--" + key);
                if (!opt) opt = app.get_option_no_throw("--" + key);
                if (!opt || key == "config" || key == "help") {
                    throw ConfigError("unknown key '" + key + "' in " + cfg_path + " for command " +
                                      sub->get_name());
                }
                if (given.count(key)) continue;
                if (opt->get_items_expected_max() > 1 && value.find(',') == std::string::npos &&
                    opt->get_delimiter() == '\0') {
                    injected.push_back("--" + key);
                    injected.push_back(value);
                } else {
                    injected.push_back("--" + key + "=" + value);
                }
            }
            argv.insert(argv.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, injected.begin(),
                        injected.end());
        }
    } catch (const ConfigError& e) {
        err << Json{{"level", "error"}, {"event", "config"}, {"message", e.what()}}.dump() << '\n';
        return kConfigError;
    }

    try {
        std::vector<std::string> rev(argv.rbegin(), argv.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kOk;
        }
        err << Json{{"level", "error"}, {"event", "usage"}, {"message", e.what()}}.dump() << '\n';
        return kConfigError;
    }

    if (g.threads > 0) omp_set_num_threads(g.threads);
    auto* sub = app.get_subcommands().front();
    try {
        Logger log(err, g);
        Context ctx;
        ctx.prov = {config_hash(*sub), kLibraryVersion, sub->get_name()};
        ctx.log = &log;
        log.log("info", "start", {{"command", sub->get_name()},
                                  {"config_hash", hex64(ctx.prov.config_hash)},
                                  {"version", kLibraryVersion},
                                  {"threads", omp_get_max_threads()}});
        const auto& name = sub->get_name();
        if (name == "synth") return cmd_synth(so, ctx);
        if (name == "groundtruth") return cmd_groundtruth(go, ctx);
        if (name == "train") return cmd_train(to, ctx, out);
        if (name == "encode") return cmd_encode(eo, ctx);
        if (name == "decode") return cmd_decode(dopt, ctx);
        if (name == "eval") return cmd_eval(ev, ctx, out);
        if (name == "build-index") return cmd_build_index(io, ctx);
        if (name == "search") return cmd_search(sopt, ctx, out);
        if (name == "sweep-report") return cmd_sweep_report(sw, ctx, out);
        return kInternal;
    } catch (const ConfigError& e) {
        err << Json{{"level", "error"}, {"event", "config"}, {"message", e.what()}}.dump() << '\n';
        return kConfigError;
    } catch (const FormatError& e) {
        err << Json{{"level", "error"}, {"event", "format"}, {"message", e.what()}}.dump() << '\n';
        return kFormatError;
    } catch (const NumericalError& e) {
        err << Json{{"level", "error"}, {"event", "numerical"}, {"message", e.what()}}.dump()
            << '\n';
        return kNumericalError;
    } catch (const std::exception& e) {
        err << Json{{"level", "error"}, {"event", "internal"}, {"message", e.what()}}.dump()
            << '\n';
        return kInternal;
    }
}

} // namespace qinco::cli
