#pragma once

#include <qinco/data/vector_set.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace qinco::cli {

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kConfigError = 2,
    kFormatError = 3,
    kNumericalError = 4,
};

/// Runs one command line (args excludes the program name). Reports go to
/// `out`, JSON-lines logs and errors to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Provenance stamped into every artifact.
struct Provenance {
    std::uint64_t config_hash = 0;
    std::string version;
    std::string command;
};

/// Code file: "QCDS", u32 format version, u64 n, m, k, u64 config hash, then
/// n*m codes of 1 byte (k <= 256), 2 bytes (k <= 65536) or 4 bytes.
inline constexpr std::size_t kCodeHeaderBytes = 40;
void write_code_file(const std::filesystem::path& path, const CodeArray& codes,
                     std::uint64_t config_hash);
CodeArray read_code_file(const std::filesystem::path& path, std::uint64_t* config_hash = nullptr);

/// Binary envelope for models and indexes: "QART", u32 version, provenance,
/// kind string, payload array.
void write_artifact(const std::filesystem::path& path, const std::string& kind,
                    const Provenance& prov, std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> read_artifact(const std::filesystem::path& path, const std::string& kind,
                                        Provenance* prov = nullptr);

struct ParetoPoint {
    std::string label;
    double x = 0.0;
    double y = 0.0;
};

/// `x_high`/`y_high` pick the better direction per axis. Flags the points not
/// dominated by any other (at least as good on both axes and strictly
/// better on one).
std::vector<bool> pareto_front(const std::vector<ParetoPoint>& pts, bool x_high, bool y_high);

} // namespace qinco::cli
