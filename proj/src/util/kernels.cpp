#include <qinco/util/kernels.hpp>

#include <algorithm>
#include <cstring>
#include <limits>

namespace qinco {

namespace {

using v16 = float __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 16;
constexpr std::size_t kRowTile = 6;

inline v16 load16(const float* p) {
    v16 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline void store16(float* p, v16 v) {
    std::memcpy(p, &v, sizeof(v));
}

// acc[r][c] accumulates sum_k a[r][k] * w[k][c*16 .. c*16+15] in k order.
template <int NC>
void micro_kernel(const float* const a[kRowTile], std::size_t in, const float* w,
                  std::size_t ldw, float* out, std::size_t ldo) {
    v16 acc[kRowTile][NC];
    for (auto& row : acc) {
        for (auto& v : row) {
            v = v16{};
        }
    }
    for (std::size_t k = 0; k < in; ++k) {
        v16 wv[NC];
        for (int c = 0; c < NC; ++c) {
            wv[c] = load16(w + k * ldw + c * kLanes);
        }
        for (std::size_t r = 0; r < kRowTile; ++r) {
            const float ar = a[r][k];
            for (int c = 0; c < NC; ++c) {
                acc[r][c] += ar * wv[c];
            }
        }
    }
    for (std::size_t r = 0; r < kRowTile; ++r) {
        for (int c = 0; c < NC; ++c) {
            store16(out + r * ldo + c * kLanes, acc[r][c]);
        }
    }
}

} // namespace

PackedMatrix::PackedMatrix(std::size_t in, std::size_t out, std::span<const float> w)
    : in_(in), out_(out), ld_((out + kLanes - 1) / kLanes * kLanes) {
    QINCO_CHECK(w.size() == in * out, "weight size mismatch");
    w_.assign(in_ * ld_, 0.0F);
    for (std::size_t k = 0; k < in_; ++k) {
        std::copy_n(w.data() + k * out_, out_, w_.data() + k * ld_);
    }
}

PackedMatrix PackedMatrix::transpose_of(std::size_t rows, std::size_t cols,
                                        std::span<const float> t) {
    QINCO_CHECK(t.size() == rows * cols, "table size mismatch");
    std::vector<float> w(cols * rows);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            w[c * rows + r] = t[r * cols + c];
        }
    }
    return PackedMatrix(cols, rows, w);
}

void PackedMatrix::apply(const float* x, std::size_t n, std::size_t x_stride, float* y,
                         std::size_t y_stride) const {
    if (n == 0 || out_ == 0) {
        return;
    }
    const std::size_t nchunk = ld_ / kLanes;
    thread_local std::vector<float> pad, tile;
    pad.resize(kRowTile * std::max<std::size_t>(in_, 1));
    tile.resize(kRowTile * ld_);

    for (std::size_t r0 = 0; r0 < n; r0 += kRowTile) {
        const std::size_t rows = std::min(kRowTile, n - r0);
        const float* a[kRowTile];
        if (rows == kRowTile) {
            for (std::size_t r = 0; r < kRowTile; ++r) {
                a[r] = x + (r0 + r) * x_stride;
            }
        } else {
            std::fill(pad.begin(), pad.end(), 0.0F);
            for (std::size_t r = 0; r < rows; ++r) {
                std::copy_n(x + (r0 + r) * x_stride, in_, pad.data() + r * in_);
            }
            for (std::size_t r = 0; r < kRowTile; ++r) {
                a[r] = pad.data() + r * in_;
            }
        }
        for (std::size_t c0 = 0; c0 < nchunk; c0 += 4) {
            const float* w = w_.data() + c0 * kLanes;
            float* o = tile.data() + c0 * kLanes;
            switch (std::min<std::size_t>(4, nchunk - c0)) {
            case 4: micro_kernel<4>(a, in_, w, ld_, o, ld_); break;
            case 3: micro_kernel<3>(a, in_, w, ld_, o, ld_); break;
            case 2: micro_kernel<2>(a, in_, w, ld_, o, ld_); break;
            default: micro_kernel<1>(a, in_, w, ld_, o, ld_); break;
            }
        }
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(tile.data() + r * ld_, out_, y + (r0 + r) * y_stride);
        }
    }
}

double squared_distance(const float* a, const float* b, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double t = static_cast<double>(a[j]) - static_cast<double>(b[j]);
        s += t * t;
    }
    return s;
}

double squared_norm(const float* a, std::size_t d) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        s += static_cast<double>(a[j]) * a[j];
    }
    return s;
}

NearestResult nearest_rows(const float* queries, std::size_t n, const float* table,
                           std::size_t k, std::size_t d) {
    QINCO_CHECK(k >= 1, "empty table");
    NearestResult res;
    res.index.resize(n);
    res.distance.resize(n);
    if (n == 0) {
        return res;
    }
    const auto packed = PackedMatrix::transpose_of(k, d, {table, k * d});
    std::vector<float> half_norms(k);
    double max_norm = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const double nn = squared_norm(table + c * d, d);
        half_norms[c] = static_cast<float>(0.5 * nn);
        max_norm = std::max(max_norm, nn);
    }
    // Float screening error is far below this; survivors get exact distances.
    const double rel_tol = static_cast<double>(d + 16) * 0x1.0p-20;

    constexpr std::size_t kBlock = 256;
    const auto nblocks = static_cast<std::int64_t>((n + kBlock - 1) / kBlock);
#pragma omp parallel
    {
        std::vector<float> dots(kBlock * k);
#pragma omp for schedule(static)
        for (std::int64_t blk = 0; blk < nblocks; ++blk) {
            const std::size_t b0 = static_cast<std::size_t>(blk) * kBlock;
            const std::size_t nb = std::min(kBlock, n - b0);
            packed.apply(queries + b0 * d, nb, d, dots.data(), k);
            for (std::size_t i = 0; i < nb; ++i) {
                const float* q = queries + (b0 + i) * d;
                const float* dr = dots.data() + i * k;
                float best = std::numeric_limits<float>::infinity();
                for (std::size_t c = 0; c < k; ++c) {
                    best = std::min(best, half_norms[c] - dr[c]);
                }
                const double tol = rel_tol * (squared_norm(q, d) + max_norm) + 1e-30;
                double best_exact = std::numeric_limits<double>::infinity();
                code_t best_idx = 0;
                for (std::size_t c = 0; c < k; ++c) {
                    if (static_cast<double>(half_norms[c] - dr[c]) <= best + tol) {
                        const double e = squared_distance(q, table + c * d, d);
                        if (e < best_exact) {
                            best_exact = e;
                            best_idx = static_cast<code_t>(c);
                        }
                    }
                }
                res.index[b0 + i] = best_idx;
                res.distance[b0 + i] = best_exact;
            }
        }
    }
    return res;
}

} // namespace qinco
