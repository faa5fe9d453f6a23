#pragma once

// Dense kernels for the network layers. Everything works on NHWC tensors and
// reduces convolutions to GEMMs through im2col / col2im.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "sim2real/tensor.hpp"

namespace sim2real {

struct ConvGeometry {
    int kernel = 1;
    int stride = 1;
    int dilation = 1;
    int pad_before = 0;
    int pad_after = 0;

    // Output extent for an input extent, or <= 0 when the window does not fit.
    [[nodiscard]] int out_extent(int in) const {
        const int span = dilation * (kernel - 1) + 1;
        const int padded = in + pad_before + pad_after;
        if (padded < span) {
            return 0;
        }
        return (padded - span) / stride + 1;
    }
};

// Rows [row_begin, row_end) of the im2col matrix of `x`. Row r is output
// position r in (n, oy, ox) order; column order is (ky, kx, c).
template <typename Scalar>
void im2col_rows(const Tensor<Scalar>& x, const ConvGeometry& g, Eigen::Index row_begin, Eigen::Index row_end,
                 RowMatrix<Scalar>& cols) {
    const Shape& s = x.shape();
    const int ho = g.out_extent(s.h);
    const int wo = g.out_extent(s.w);
    const int k = g.kernel;
    const Eigen::Index width = static_cast<Eigen::Index>(k) * k * s.c;
    cols.resize(row_end - row_begin, width);
    const Scalar* src = x.data().data();
    for (Eigen::Index r = row_begin; r < row_end; ++r) {
        const int ox = static_cast<int>(r % wo);
        const int oy = static_cast<int>((r / wo) % ho);
        const int n = static_cast<int>(r / (static_cast<Eigen::Index>(wo) * ho));
        Scalar* row = cols.data() + (r - row_begin) * width;
        for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad_before + ky * g.dilation;
            Scalar* dst = row + static_cast<Eigen::Index>(ky) * k * s.c;
            if (iy < 0 || iy >= s.h) {
                std::fill(dst, dst + static_cast<Eigen::Index>(k) * s.c, Scalar(0));
                continue;
            }
            const Scalar* line = src + (static_cast<std::int64_t>(n) * s.h + iy) * s.w * s.c;
            const int ix0 = ox * g.stride - g.pad_before;
            if (g.dilation == 1) {
                // Valid taps read one contiguous run of the input row.
                const int lo = std::clamp(-ix0, 0, k);
                const int hi = std::clamp(s.w - ix0, lo, k);
                std::fill(dst, dst + static_cast<Eigen::Index>(lo) * s.c, Scalar(0));
                std::copy(line + static_cast<std::int64_t>(ix0 + lo) * s.c, line + static_cast<std::int64_t>(ix0 + hi) * s.c,
                          dst + static_cast<Eigen::Index>(lo) * s.c);
                std::fill(dst + static_cast<Eigen::Index>(hi) * s.c, dst + static_cast<Eigen::Index>(k) * s.c, Scalar(0));
                continue;
            }
            for (int kx = 0; kx < k; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= s.w) {
                    std::fill(dst + kx * s.c, dst + (kx + 1) * s.c, Scalar(0));
                } else {
                    std::copy(line + static_cast<std::int64_t>(ix) * s.c, line + (static_cast<std::int64_t>(ix) + 1) * s.c,
                              dst + kx * s.c);
                }
            }
        }
    }
}

// Adjoint of im2col_rows: scatter-adds the given rows onto `out`.
template <typename Scalar>
void col2im_rows(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Eigen::Index row_begin, Tensor<Scalar>& out) {
    const Shape& s = out.shape();
    const int ho = g.out_extent(s.h);
    const int wo = g.out_extent(s.w);
    const int k = g.kernel;
    const Eigen::Index width = cols.cols();
    Scalar* dstbase = out.data().data();
    for (Eigen::Index i = 0; i < cols.rows(); ++i) {
        const Eigen::Index r = row_begin + i;
        const int ox = static_cast<int>(r % wo);
        const int oy = static_cast<int>((r / wo) % ho);
        const int n = static_cast<int>(r / (static_cast<Eigen::Index>(wo) * ho));
        const Scalar* row = cols.data() + i * width;
        for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * g.stride - g.pad_before + ky * g.dilation;
            if (iy < 0 || iy >= s.h) {
                continue;
            }
            Scalar* line = dstbase + (static_cast<std::int64_t>(n) * s.h + iy) * s.w * s.c;
            const Scalar* src = row + static_cast<Eigen::Index>(ky) * k * s.c;
            const int ix0 = ox * g.stride - g.pad_before;
            if (g.dilation == 1) {
                const int lo = std::clamp(-ix0, 0, k);
                const int hi = std::clamp(s.w - ix0, lo, k);
                const Eigen::Index len = static_cast<Eigen::Index>(hi - lo) * s.c;
                Eigen::Map<Vector<Scalar>>(line + static_cast<std::int64_t>(ix0 + lo) * s.c, len) +=
                    Eigen::Map<const Vector<Scalar>>(src + static_cast<Eigen::Index>(lo) * s.c, len);
                continue;
            }
            for (int kx = 0; kx < k; ++kx) {
                const int ix = ix0 + kx * g.dilation;
                if (ix < 0 || ix >= s.w) {
                    continue;
                }
                Scalar* px = line + static_cast<std::int64_t>(ix) * s.c;
                const Scalar* tap = src + static_cast<Eigen::Index>(kx) * s.c;
                for (int c = 0; c < s.c; ++c) {
                    px[c] += tap[c];
                }
            }
        }
    }
}

// Full im2col: (n·ho·wo) × (k·k·c).
template <typename Scalar>
void im2col(const Tensor<Scalar>& x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
    const Shape& s = x.shape();
    im2col_rows(x, g, 0, static_cast<Eigen::Index>(s.n) * g.out_extent(s.h) * g.out_extent(s.w), cols);
}

template <typename Scalar>
void col2im(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Tensor<Scalar>& out) {
    col2im_rows(cols, g, 0, out);
}

// Rows per im2col tile so a tile stays around 256 KiB.
inline Eigen::Index conv_tile_rows(Eigen::Index width, std::size_t scalar_bytes) {
    const auto budget = static_cast<Eigen::Index>((256 * 1024) / scalar_bytes);
    return std::max<Eigen::Index>(32, budget / std::max<Eigen::Index>(width, 1));
}

// ---------------------------------------------------------------------------
// Pixel normalization: every spatial position's channel vector is scaled to
// unit Euclidean length.

template <typename Scalar>
struct PixelNormCache {
    Vector<Scalar> inv_norm;  // one per position
};

template <typename Scalar>
constexpr Scalar pixel_norm_eps() {
    return Scalar(1e-12);
}

template <typename Scalar>
Tensor<Scalar> pixel_norm_forward(const Tensor<Scalar>& z, PixelNormCache<Scalar>& cache) {
    Tensor<Scalar> y(z.shape());
    const auto zm = z.matrix();
    cache.inv_norm = (zm.rowwise().squaredNorm().array() + pixel_norm_eps<Scalar>()).rsqrt().matrix();
    y.matrix() = cache.inv_norm.asDiagonal() * zm;
    return y;
}

// dz = (g − y·⟨g, y⟩) / r
template <typename Scalar>
Tensor<Scalar> pixel_norm_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad,
                                   const PixelNormCache<Scalar>& cache) {
    Tensor<Scalar> dz(y.shape());
    const auto ym = y.matrix();
    const auto gm = grad.matrix();
    const Vector<Scalar> dots = (ym.array() * gm.array()).rowwise().sum().matrix();
    dz.matrix() = cache.inv_norm.asDiagonal() * (gm - dots.asDiagonal() * ym);
    return dz;
}

// ---------------------------------------------------------------------------
// Group normalization over (h, w, channels-in-group) per sample. Instance
// normalization is the special case groups == channels.

template <typename Scalar>
struct GroupNormCache {
    int groups = 1;
    Vector<Scalar> inv_std;  // n × groups
};

template <typename Scalar>
constexpr Scalar group_norm_eps() {
    return Scalar(1e-6);
}

template <typename Scalar>
Tensor<Scalar> group_norm_forward(const Tensor<Scalar>& z, int groups, GroupNormCache<Scalar>& cache) {
    const Shape& s = z.shape();
    if (groups <= 0 || s.c % groups != 0) {
        throw DimensionError("group norm: " + std::to_string(s.c) + " channels not divisible into " +
                             std::to_string(groups) + " groups");
    }
    const int cg = s.c / groups;
    const int hw = s.h * s.w;
    cache.groups = groups;
    cache.inv_std.resize(static_cast<Eigen::Index>(s.n) * groups);
    Tensor<Scalar> y(s);
    const auto zm = z.matrix();
    auto ym = y.matrix();
    const Scalar count = static_cast<Scalar>(hw) * cg;
    for (int n = 0; n < s.n; ++n) {
        const auto zb = zm.middleRows(static_cast<Eigen::Index>(n) * hw, hw);
        auto yb = ym.middleRows(static_cast<Eigen::Index>(n) * hw, hw);
        for (int gi = 0; gi < groups; ++gi) {
            const auto block = zb.middleCols(gi * cg, cg);
            const Scalar mean = block.sum() / count;
            const Scalar var = (block.array() - mean).square().sum() / count;
            const Scalar inv = Scalar(1) / std::sqrt(var + group_norm_eps<Scalar>());
            cache.inv_std[n * groups + gi] = inv;
            yb.middleCols(gi * cg, cg) = ((block.array() - mean) * inv).matrix();
        }
    }
    return y;
}

// dz = inv_std · (g − mean(g) − y·mean(g·y)) within each group.
template <typename Scalar>
Tensor<Scalar> group_norm_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad,
                                   const GroupNormCache<Scalar>& cache) {
    const Shape& s = y.shape();
    const int groups = cache.groups;
    const int cg = s.c / groups;
    const int hw = s.h * s.w;
    const Scalar count = static_cast<Scalar>(hw) * cg;
    Tensor<Scalar> dz(s);
    const auto ym = y.matrix();
    const auto gm = grad.matrix();
    auto dm = dz.matrix();
    for (int n = 0; n < s.n; ++n) {
        for (int gi = 0; gi < groups; ++gi) {
            const auto yb = ym.block(static_cast<Eigen::Index>(n) * hw, gi * cg, hw, cg);
            const auto gb = gm.block(static_cast<Eigen::Index>(n) * hw, gi * cg, hw, cg);
            const Scalar mean_g = gb.sum() / count;
            const Scalar mean_gy = (gb.array() * yb.array()).sum() / count;
            dm.block(static_cast<Eigen::Index>(n) * hw, gi * cg, hw, cg) =
                (cache.inv_std[n * groups + gi] * (gb.array() - mean_g - yb.array() * mean_gy)).matrix();
        }
    }
    return dz;
}

// ---------------------------------------------------------------------------
// 2×2 stride-2 max pooling (odd trailing rows/cols are dropped).

template <typename Scalar>
Tensor<Scalar> maxpool2_forward(const Tensor<Scalar>& x, std::vector<std::int64_t>& argmax) {
    const Shape& s = x.shape();
    Shape o{s.n, s.h / 2, s.w / 2, s.c};
    Tensor<Scalar> y(o);
    argmax.assign(static_cast<std::size_t>(o.size()), 0);
    for (int n = 0; n < o.n; ++n) {
        for (int oy = 0; oy < o.h; ++oy) {
            for (int ox = 0; ox < o.w; ++ox) {
                for (int c = 0; c < o.c; ++c) {
                    Scalar best = -std::numeric_limits<Scalar>::infinity();
                    std::int64_t best_idx = 0;
                    for (int dy = 0; dy < 2; ++dy) {
                        for (int dx = 0; dx < 2; ++dx) {
                            const std::int64_t idx = x.index(n, 2 * oy + dy, 2 * ox + dx, c);
                            if (x.data()[idx] > best) {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    const std::int64_t oi = y.index(n, oy, ox, c);
                    y.data()[oi] = best;
                    argmax[static_cast<std::size_t>(oi)] = best_idx;
                }
            }
        }
    }
    return y;
}

template <typename Scalar>
Tensor<Scalar> maxpool2_backward(const Shape& in_shape, const Tensor<Scalar>& grad,
                                 const std::vector<std::int64_t>& argmax) {
    Tensor<Scalar> dx(in_shape);
    for (std::int64_t i = 0; i < grad.size(); ++i) {
        dx.data()[argmax[static_cast<std::size_t>(i)]] += grad.data()[i];
    }
    return dx;
}

// Averages the h×w map into a grid×grid set of patch scores, returned as
// (n, 1, 1, grid·grid·c).
template <typename Scalar>
Tensor<Scalar> patch_pool_forward(const Tensor<Scalar>& x, int grid) {
    const Shape& s = x.shape();
    const int ph = s.h / grid;
    const int pw = s.w / grid;
    Tensor<Scalar> y(Shape{s.n, 1, 1, grid * grid * s.c});
    const Scalar inv = Scalar(1) / static_cast<Scalar>(ph * pw);
    for (int n = 0; n < s.n; ++n) {
        for (int yy = 0; yy < s.h; ++yy) {
            for (int xx = 0; xx < s.w; ++xx) {
                const int cell = (yy / ph) * grid + (xx / pw);
                for (int c = 0; c < s.c; ++c) {
                    y(n, 0, 0, cell * s.c + c) += x(n, yy, xx, c) * inv;
                }
            }
        }
    }
    return y;
}

template <typename Scalar>
Tensor<Scalar> patch_pool_backward(const Shape& in_shape, const Tensor<Scalar>& grad, int grid) {
    const int ph = in_shape.h / grid;
    const int pw = in_shape.w / grid;
    const Scalar inv = Scalar(1) / static_cast<Scalar>(ph * pw);
    Tensor<Scalar> dx(in_shape);
    for (int n = 0; n < in_shape.n; ++n) {
        for (int yy = 0; yy < in_shape.h; ++yy) {
            for (int xx = 0; xx < in_shape.w; ++xx) {
                const int cell = (yy / ph) * grid + (xx / pw);
                for (int c = 0; c < in_shape.c; ++c) {
                    dx(n, yy, xx, c) = grad(n, 0, 0, cell * in_shape.c + c) * inv;
                }
            }
        }
    }
    return dx;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_forward(const Tensor<Scalar>& x) {
    const Shape& s = x.shape();
    Tensor<Scalar> y(Shape{s.n, 1, 1, s.c});
    const int hw = s.h * s.w;
    const auto xm = x.matrix();
    for (int n = 0; n < s.n; ++n) {
        y.matrix().row(n) = xm.middleRows(static_cast<Eigen::Index>(n) * hw, hw).colwise().mean();
    }
    return y;
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool_backward(const Shape& in_shape, const Tensor<Scalar>& grad) {
    Tensor<Scalar> dx(in_shape);
    const int hw = in_shape.h * in_shape.w;
    auto dm = dx.matrix();
    for (int n = 0; n < in_shape.n; ++n) {
        dm.middleRows(static_cast<Eigen::Index>(n) * hw, hw).rowwise() =
            grad.matrix().row(n) / static_cast<Scalar>(hw);
    }
    return dx;
}

}  // namespace sim2real
