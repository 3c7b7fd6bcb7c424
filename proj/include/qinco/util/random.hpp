#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace qinco {

/// Portable random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The distributions are implemented here (not taken from <random>,
/// whose distribution algorithms are implementation-defined): uniform doubles
/// use the top 53 bits, integers use rejection sampling and normals use the
/// Box-Muller transform. A given seed therefore produces the same stream on
/// every conforming platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    double normal();

    void shuffle(std::span<std::size_t> items);

    /// k distinct indices from [0, n), in sampling order.
    std::vector<std::size_t> sample_distinct(std::size_t n, std::size_t k);

    /// Derives an independent seed for a sub-stream.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace qinco
