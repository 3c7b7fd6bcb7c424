#pragma once

#include <qinco/data/vector_set.hpp>

#include <filesystem>
#include <optional>
#include <string_view>

namespace qinco {

// BigANN containers: each record is a little-endian int32 dimension followed by
// `dim` payload entries (float32 for fvecs, uint8 for bvecs, int32 for ivecs).

enum class VecsFormat { fvecs, bvecs, ivecs };

VecsFormat vecs_format_from_path(const std::filesystem::path& path);

/// Reads fvecs or bvecs (bytes widened to float, no rescaling). An empty
/// file yields n=0, d=0.
VectorSet read_vectors(const std::filesystem::path& path, VecsFormat format,
                       std::optional<std::size_t> limit = std::nullopt);

/// Dispatches on the file extension.
VectorSet read_vectors(const std::filesystem::path& path,
                       std::optional<std::size_t> limit = std::nullopt);

IdTable read_ivecs(const std::filesystem::path& path,
                   std::optional<std::size_t> limit = std::nullopt);

void write_fvecs(const std::filesystem::path& path, const VectorSet& x);
/// Values must be integers in [0, 255].
void write_bvecs(const std::filesystem::path& path, const VectorSet& x);
void write_ivecs(const std::filesystem::path& path, const IdTable& table);

} // namespace qinco
