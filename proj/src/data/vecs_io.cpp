#include <qinco/data/vecs_io.hpp>

#include <qinco/util/binary_io.hpp>

#include <cmath>
#include <cstring>

namespace qinco {

namespace {

std::size_t payload_size(VecsFormat f) {
    return f == VecsFormat::bvecs ? 1 : 4;
}

struct RawRecords {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<std::size_t> payload_offsets;
};

// Walks the record headers, validating dims and truncation.
RawRecords scan_records(std::span<const std::uint8_t> bytes, VecsFormat format,
                        std::optional<std::size_t> limit) {
    RawRecords rec;
    const std::size_t elem = payload_size(format);
    std::size_t pos = 0;
    while (pos < bytes.size() && (!limit || rec.n < *limit)) {
        if (bytes.size() - pos < 4) {
            throw FormatError("truncated record header at byte offset " + std::to_string(pos));
        }
        std::int32_t dim = 0;
        std::memcpy(&dim, bytes.data() + pos, 4);
        if (dim <= 0) {
            throw FormatError("invalid dimension " + std::to_string(dim) + " at byte offset " +
                              std::to_string(pos));
        }
        if (rec.n == 0) {
            rec.d = static_cast<std::size_t>(dim);
        } else if (static_cast<std::size_t>(dim) != rec.d) {
            throw FormatError("inconsistent dimension at byte offset " + std::to_string(pos) +
                              ": expected " + std::to_string(rec.d) + ", found " +
                              std::to_string(dim));
        }
        const std::size_t need = static_cast<std::size_t>(dim) * elem;
        if (bytes.size() - pos - 4 < need) {
            throw FormatError("truncated record at byte offset " + std::to_string(pos) +
                              ": need " + std::to_string(need) + " payload bytes, have " +
                              std::to_string(bytes.size() - pos - 4));
        }
        rec.payload_offsets.push_back(pos + 4);
        pos += 4 + need;
        ++rec.n;
    }
    return rec;
}

void put_header(BinaryWriter& w, std::size_t d) {
    w.put<std::int32_t>(static_cast<std::int32_t>(d));
}

} // namespace

VecsFormat vecs_format_from_path(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".fvecs") return VecsFormat::fvecs;
    if (ext == ".bvecs") return VecsFormat::bvecs;
    if (ext == ".ivecs") return VecsFormat::ivecs;
    throw ConfigError("unknown vector file extension '" + ext + "' for " + path.string());
}

VectorSet read_vectors(const std::filesystem::path& path, VecsFormat format,
                       std::optional<std::size_t> limit) {
    QINCO_CHECK(format != VecsFormat::ivecs, "use read_ivecs for integer tables");
    const auto bytes = read_file_bytes(path);
    const auto rec = scan_records(bytes, format, limit);
    VectorSet out(rec.n, rec.d);
    for (std::size_t i = 0; i < rec.n; ++i) {
        const auto* src = bytes.data() + rec.payload_offsets[i];
        float* dst = out.data() + i * rec.d;
        if (format == VecsFormat::fvecs) {
            std::memcpy(dst, src, rec.d * sizeof(float));
        } else {
            for (std::size_t j = 0; j < rec.d; ++j) {
                dst[j] = static_cast<float>(src[j]);
            }
        }
    }
    return out;
}

VectorSet read_vectors(const std::filesystem::path& path, std::optional<std::size_t> limit) {
    return read_vectors(path, vecs_format_from_path(path), limit);
}

IdTable read_ivecs(const std::filesystem::path& path, std::optional<std::size_t> limit) {
    const auto bytes = read_file_bytes(path);
    const auto rec = scan_records(bytes, VecsFormat::ivecs, limit);
    IdTable out{rec.n, rec.d, std::vector<std::int32_t>(rec.n * rec.d)};
    for (std::size_t i = 0; i < rec.n; ++i) {
        std::memcpy(out.ids.data() + i * rec.d, bytes.data() + rec.payload_offsets[i],
                    rec.d * sizeof(std::int32_t));
    }
    return out;
}

void write_fvecs(const std::filesystem::path& path, const VectorSet& x) {
    BinaryWriter w;
    for (std::size_t i = 0; i < x.n(); ++i) {
        put_header(w, x.d());
        w.put_raw(x.row(i));
    }
    write_file_bytes(path, w.bytes());
}

void write_bvecs(const std::filesystem::path& path, const VectorSet& x) {
    BinaryWriter w;
    std::vector<std::uint8_t> row(x.d());
    for (std::size_t i = 0; i < x.n(); ++i) {
        put_header(w, x.d());
        for (std::size_t j = 0; j < x.d(); ++j) {
            const float v = x.row(i)[j];
            if (!(v >= 0.0F && v <= 255.0F) || std::nearbyint(v) != v) {
                throw ConfigError("bvecs value " + std::to_string(v) + " is not a byte");
            }
            row[j] = static_cast<std::uint8_t>(v);
        }
        w.put_bytes(row);
    }
    write_file_bytes(path, w.bytes());
}

void write_ivecs(const std::filesystem::path& path, const IdTable& table) {
    BinaryWriter w;
    for (std::size_t i = 0; i < table.n; ++i) {
        put_header(w, table.k);
        w.put_raw(table.row(i));
    }
    write_file_bytes(path, w.bytes());
}

} // namespace qinco
