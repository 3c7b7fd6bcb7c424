#include <qinco/model/model.hpp>

#include <qinco/util/binary_io.hpp>

namespace qinco {

namespace {

constexpr std::string_view kModelMagic = "QNC2";
constexpr std::uint32_t kModelVersion = 1;

void put_param(BinaryWriter& w, const ad::Parameter<float>& p) {
    w.put_string(p.name());
    w.put<std::uint64_t>(p.rows());
    w.put<std::uint64_t>(p.cols());
    w.put_raw<float>(p.value());
}

void get_param(BinaryReader& r, ad::Parameter<float>& p) {
    const auto name = r.get_string();
    const auto rows = r.get<std::uint64_t>(), cols = r.get<std::uint64_t>();
    if (name != p.name() || rows != p.rows() || cols != p.cols()) {
        throw FormatError("model parameter '" + name + "' (" + std::to_string(rows) + "x" +
                          std::to_string(cols) + ") does not match expected '" + p.name() +
                          "' (" + std::to_string(p.rows()) + "x" + std::to_string(p.cols()) +
                          ")");
    }
    p.value() = r.get_raw<float>(rows * cols);
}

void put_net(BinaryWriter& w, const StepNet& net) {
    for (const auto* p : net.parameters()) {
        put_param(w, *p);
    }
}

void get_net(BinaryReader& r, StepNet& net) {
    for (auto* p : net.parameters()) {
        get_param(r, *p);
    }
}

bool same_param(const ad::Parameter<float>& a, const ad::Parameter<float>& b) {
    return a.name() == b.name() && a.rows() == b.rows() && a.cols() == b.cols() &&
           a.value() == b.value();
}

bool same_net(const StepNet& a, const StepNet& b) {
    const auto pa = a.parameters(), pb = b.parameters();
    if (pa.size() != pb.size()) {
        return false;
    }
    for (std::size_t i = 0; i < pa.size(); ++i) {
        if (!same_param(*pa[i], *pb[i])) {
            return false;
        }
    }
    return true;
}

} // namespace

Codebook QincoStep::codebook_table() const {
    return Codebook(codebook.rows(), codebook.cols(), codebook.value());
}

Codebook QincoStep::pre_codebook_table() const {
    return Codebook(pre_codebook.rows(), pre_codebook.cols(), pre_codebook.value());
}

QincoModel QincoModel::zeros(const QincoConfig& config) {
    config.validate();
    QincoModel model;
    model.config = config;
    model.norm.mean.assign(config.d, 0.0F);
    model.norm.scale = 1.0F;
    for (std::size_t m = 0; m < config.m; ++m) {
        const std::string s = "step" + std::to_string(m);
        QincoStep step;
        step.codebook = ad::Parameter<float>(s + ".codebook", config.k, config.d);
        step.net = StepNet(s + ".f", config.d, config.d_e, config.d_h, config.depth);
        step.pre_codebook = ad::Parameter<float>(s + ".pre_codebook", config.k, config.d);
        if (config.preselect_depth > 0) {
            step.pre_net = StepNet(s + ".g", config.d, config.d_e, config.preselect_d_h,
                                   config.preselect_depth);
        }
        model.steps.push_back(std::move(step));
    }
    return model;
}

std::vector<ad::Parameter<float>*> QincoModel::parameters() {
    std::vector<ad::Parameter<float>*> ps;
    for (auto& s : steps) {
        ps.push_back(&s.codebook);
        for (auto* p : s.net.parameters()) ps.push_back(p);
        ps.push_back(&s.pre_codebook);
        if (s.pre_net) {
            for (auto* p : s.pre_net->parameters()) ps.push_back(p);
        }
    }
    return ps;
}

std::size_t QincoModel::parameter_count(bool include_preselection) const {
    std::size_t n = 0;
    for (const auto& s : steps) {
        n += s.codebook.size() + s.net.parameter_count();
        if (include_preselection) {
            n += s.pre_codebook.size() + (s.pre_net ? s.pre_net->parameter_count() : 0);
        }
    }
    return n;
}

void QincoModel::set_identity() {
    for (auto& s : steps) {
        s.net.set_identity();
        if (s.pre_net) {
            s.pre_net->set_identity();
        }
    }
}

bool operator==(const QincoModel& a, const QincoModel& b) {
    if (!(a.config == b.config) || !(a.norm == b.norm) || a.ivf_centroids != b.ivf_centroids ||
        a.steps.size() != b.steps.size()) {
        return false;
    }
    for (std::size_t m = 0; m < a.steps.size(); ++m) {
        const auto& x = a.steps[m];
        const auto& y = b.steps[m];
        if (!same_param(x.codebook, y.codebook) || !same_param(x.pre_codebook, y.pre_codebook) ||
            !same_net(x.net, y.net) || x.pre_net.has_value() != y.pre_net.has_value() ||
            (x.pre_net && !same_net(*x.pre_net, *y.pre_net))) {
            return false;
        }
    }
    return true;
}

std::vector<std::uint8_t> serialize_model(const QincoModel& model) {
    const auto& c = model.config;
    BinaryWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kModelMagic.data()), kModelMagic.size()});
    w.put<std::uint32_t>(kModelVersion);
    for (std::size_t v : {c.m, c.k, c.d, c.d_e, c.d_h, c.depth, c.preselect_depth,
                          c.preselect_d_h, c.a_train, c.b_train, c.a_eval, c.b_eval}) {
        w.put<std::uint64_t>(v);
    }
    w.put<std::uint8_t>(c.ivf_enabled ? 1 : 0);
    w.put_array<float>(model.norm.mean);
    w.put<float>(model.norm.scale);
    w.put<std::uint8_t>(model.ivf_centroids ? 1 : 0);
    if (model.ivf_centroids) {
        w.put<std::uint64_t>(model.ivf_centroids->k());
        w.put<std::uint64_t>(model.ivf_centroids->d());
        w.put_raw<float>(model.ivf_centroids->entries());
    }
    for (const auto& s : model.steps) {
        put_param(w, s.codebook);
        put_net(w, s.net);
        put_param(w, s.pre_codebook);
        if (s.pre_net) {
            put_net(w, *s.pre_net);
        }
    }
    return w.take();
}

QincoModel deserialize_model(std::span<const std::uint8_t> bytes) {
    BinaryReader r(bytes);
    r.expect_magic(kModelMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kModelVersion) {
        throw FormatError("unsupported model version " + std::to_string(version));
    }
    QincoConfig c;
    for (std::size_t* f : {&c.m, &c.k, &c.d, &c.d_e, &c.d_h, &c.depth, &c.preselect_depth,
                           &c.preselect_d_h, &c.a_train, &c.b_train, &c.a_eval, &c.b_eval}) {
        *f = r.get<std::uint64_t>();
    }
    c.ivf_enabled = r.get<std::uint8_t>() != 0;
    // Guards the allocation in zeros() against corrupt headers.
    if (c.m > 4096 || c.k > (1U << 20) || c.d > (1U << 16) || c.d_e > (1U << 16) ||
        c.d_h > (1U << 16) || c.depth > 1024 || c.preselect_depth > 1024) {
        throw FormatError("implausible model dimensions in header");
    }
    QincoModel model;
    try {
        model = QincoModel::zeros(c);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid model config: ") + e.what());
    }
    model.norm.mean = r.get_array<float>(c.d);
    model.norm.scale = r.get<float>();
    if (model.norm.mean.size() != c.d) {
        throw FormatError("normalization mean has wrong length");
    }
    if (r.get<std::uint8_t>() != 0) {
        const auto k = r.get<std::uint64_t>(), d = r.get<std::uint64_t>();
        if (d != c.d || k > (1U << 24)) {
            throw FormatError("IVF centroid table has wrong shape");
        }
        model.ivf_centroids = Codebook(k, d, r.get_raw<float>(k * d));
    }
    for (auto& s : model.steps) {
        get_param(r, s.codebook);
        get_net(r, s.net);
        get_param(r, s.pre_codebook);
        if (s.pre_net) {
            get_net(r, *s.pre_net);
        }
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes after model at offset " + std::to_string(r.offset()));
    }
    return model;
}

void save_model(const std::filesystem::path& path, const QincoModel& model) {
    write_file_bytes(path, serialize_model(model));
}

QincoModel load_model(const std::filesystem::path& path) {
    return deserialize_model(read_file_bytes(path));
}

std::uint64_t model_hash(const QincoModel& model) {
    return fnv1a64(serialize_model(model));
}

} // namespace qinco
