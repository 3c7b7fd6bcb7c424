#include <qinco/cli/cli.hpp>

#include <qinco/util/binary_io.hpp>

namespace qinco::cli {

namespace {

constexpr std::string_view kCodeMagic = "QCDS";
constexpr std::string_view kArtifactMagic = "QART";
constexpr std::uint32_t kFormatVersion = 1;

std::size_t code_width(std::size_t k) {
    if (k <= 256) return 1;
    if (k <= 65536) return 2;
    return 4;
}

} // namespace

void write_code_file(const std::filesystem::path& path, const CodeArray& codes,
                     std::uint64_t config_hash) {
    BinaryWriter w;
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(kCodeMagic.data()), kCodeMagic.size()});
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::uint64_t>(codes.n());
    w.put<std::uint64_t>(codes.m());
    w.put<std::uint64_t>(codes.k());
    w.put<std::uint64_t>(config_hash);
    const std::size_t width = code_width(codes.k());
    for (code_t c : codes.codes()) {
        if (width == 1) {
            w.put<std::uint8_t>(static_cast<std::uint8_t>(c));
        } else if (width == 2) {
            w.put<std::uint16_t>(static_cast<std::uint16_t>(c));
        } else {
            w.put<std::uint32_t>(c);
        }
    }
    write_file_bytes(path, w.bytes());
}

CodeArray read_code_file(const std::filesystem::path& path, std::uint64_t* config_hash) {
    const auto bytes = read_file_bytes(path);
    BinaryReader r(bytes);
    r.expect_magic(kCodeMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) {
        throw FormatError("unsupported code file version " + std::to_string(version));
    }
    const auto n = r.get<std::uint64_t>();
    const auto m = r.get<std::uint64_t>();
    const auto k = r.get<std::uint64_t>();
    const auto hash = r.get<std::uint64_t>();
    if (config_hash) *config_hash = hash;
    const std::size_t width = code_width(k);
    if (m != 0 && n > (bytes.size() - r.offset()) / (m * width)) {
        throw FormatError("code file " + path.string() + " is truncated");
    }
    std::vector<code_t> codes(n * m);
    for (auto& c : codes) {
        if (width == 1) {
            c = r.get<std::uint8_t>();
        } else if (width == 2) {
            c = r.get<std::uint16_t>();
        } else {
            c = r.get<std::uint32_t>();
        }
    }
    if (!r.at_end()) {
        throw FormatError("trailing bytes in code file " + path.string());
    }
    CodeArray out(n, m, k, std::move(codes));
    out.validate();
    return out;
}

void write_artifact(const std::filesystem::path& path, const std::string& kind,
                    const Provenance& prov, std::span<const std::uint8_t> payload) {
    BinaryWriter w;
    w.put_bytes(
        {reinterpret_cast<const std::uint8_t*>(kArtifactMagic.data()), kArtifactMagic.size()});
    w.put<std::uint32_t>(kFormatVersion);
    w.put<std::uint64_t>(prov.config_hash);
    w.put_string(prov.version);
    w.put_string(prov.command);
    w.put_string(kind);
    w.put_array<std::uint8_t>(payload);
    write_file_bytes(path, w.bytes());
}

std::vector<std::uint8_t> read_artifact(const std::filesystem::path& path, const std::string& kind,
                                        Provenance* prov) {
    const auto bytes = read_file_bytes(path);
    BinaryReader r(bytes);
    r.expect_magic(kArtifactMagic);
    const auto version = r.get<std::uint32_t>();
    if (version != kFormatVersion) {
        throw FormatError("unsupported artifact version " + std::to_string(version));
    }
    Provenance p;
    p.config_hash = r.get<std::uint64_t>();
    p.version = r.get_string();
    p.command = r.get_string();
    const auto got = r.get_string();
    if (got != kind) {
        throw FormatError(path.string() + " holds a " + got + ", expected a " + kind);
    }
    auto payload = r.get_array<std::uint8_t>();
    if (!r.at_end()) {
        throw FormatError("trailing bytes in " + path.string());
    }
    if (prov) *prov = p;
    return payload;
}

std::vector<bool> pareto_front(const std::vector<ParetoPoint>& pts, bool x_high, bool y_high) {
    auto better_eq = [](double a, double b, bool high) { return high ? a >= b : a <= b; };
    std::vector<bool> front(pts.size(), true);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = 0; j < pts.size() && front[i]; ++j) {
            const auto& p = pts[i];
            const auto& q = pts[j];
            if (better_eq(q.x, p.x, x_high) && better_eq(q.y, p.y, y_high) &&
                (q.x != p.x || q.y != p.y)) {
                front[i] = false;
            }
        }
    }
    return front;
}

} // namespace qinco::cli
