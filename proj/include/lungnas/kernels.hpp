#pragma once

// Scalar-generic lowering kernels for volumetric convolution. These operate on
// raw contiguous buffers and carry no autodiff state; ops.cpp wires them into
// the graph.

#include <algorithm>
#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace lungnas::kernels {

using Index = Eigen::Index;

struct ConvGeometry {
    Index channels = 0;
    Index depth = 0, height = 0, width = 0;
    Index kernel = 1, stride = 1, padding = 0;

    Index out_extent(Index extent) const { return (extent + 2 * padding - kernel) / stride + 1; }
    Index out_depth() const { return out_extent(depth); }
    Index out_height() const { return out_extent(height); }
    Index out_width() const { return out_extent(width); }
    Index out_plane() const { return out_height() * out_width(); }
    Index in_volume() const { return depth * height * width; }
    Index rows() const { return channels * kernel * kernel * kernel; }
    bool valid() const {
        return kernel >= 1 && stride >= 1 && padding >= 0 && depth + 2 * padding >= kernel &&
               height + 2 * padding >= kernel && width + 2 * padding >= kernel;
    }
};

namespace detail {

// Half-open range of output positions whose input tap (o*stride - padding + k)
// lands inside [0, extent).
inline void valid_range(Index out_extent, Index in_extent, Index stride, Index padding, Index k,
                        Index& lo, Index& hi) {
    const Index shift = padding - k;
    lo = shift > 0 ? (shift + stride - 1) / stride : 0;
    const Index last = in_extent - 1 + shift;
    hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
    if (lo > hi) lo = hi;
}

}  // namespace detail

/// Lowers output depth slices [od_begin, od_end) of one sample into a
/// (channels * k^3) x ((od_end - od_begin) * out_plane) row-major matrix.
template <typename Scalar>
void im2col(const Scalar* input, const ConvGeometry& g, Index od_begin, Index od_end, Scalar* col) {
    const Index oh_n = g.out_height(), ow_n = g.out_width(), od_n = od_end - od_begin;
    const Index cols = od_n * oh_n * ow_n;
    const Index k = g.kernel;
    Index row = 0;
    for (Index c = 0; c < g.channels; ++c) {
        const Scalar* plane_c = input + c * g.in_volume();
        for (Index kd = 0; kd < k; ++kd) {
            for (Index kh = 0; kh < k; ++kh) {
                Index oh_lo, oh_hi;
                detail::valid_range(oh_n, g.height, g.stride, g.padding, kh, oh_lo, oh_hi);
                for (Index kw = 0; kw < k; ++kw, ++row) {
                    Index ow_lo, ow_hi;
                    detail::valid_range(ow_n, g.width, g.stride, g.padding, kw, ow_lo, ow_hi);
                    Scalar* dst_row = col + row * cols;
                    for (Index od = od_begin; od < od_end; ++od) {
                        Scalar* dst_slice = dst_row + (od - od_begin) * oh_n * ow_n;
                        const Index id = od * g.stride - g.padding + kd;
                        if (id < 0 || id >= g.depth) {
                            std::fill(dst_slice, dst_slice + oh_n * ow_n, Scalar(0));
                            continue;
                        }
                        const Scalar* src_slice = plane_c + id * g.height * g.width;
                        for (Index oh = 0; oh < oh_n; ++oh) {
                            Scalar* dst = dst_slice + oh * ow_n;
                            if (oh < oh_lo || oh >= oh_hi) {
                                std::fill(dst, dst + ow_n, Scalar(0));
                                continue;
                            }
                            const Index ih = oh * g.stride - g.padding + kh;
                            const Index base = ih * g.width - g.padding + kw;
                            std::fill(dst, dst + ow_lo, Scalar(0));
                            if (g.stride == 1) {
                                std::copy(src_slice + base + ow_lo, src_slice + base + ow_hi, dst + ow_lo);
                            } else {
                                for (Index ow = ow_lo; ow < ow_hi; ++ow) dst[ow] = src_slice[base + ow * g.stride];
                            }
                            std::fill(dst + ow_hi, dst + ow_n, Scalar(0));
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatter-adds a lowered gradient back into the input
/// gradient buffer of one sample.
template <typename Scalar>
void col2im_add(const Scalar* col, const ConvGeometry& g, Index od_begin, Index od_end, Scalar* input_grad) {
    const Index oh_n = g.out_height(), ow_n = g.out_width(), od_n = od_end - od_begin;
    const Index cols = od_n * oh_n * ow_n;
    const Index k = g.kernel;
    Index row = 0;
    for (Index c = 0; c < g.channels; ++c) {
        Scalar* plane_c = input_grad + c * g.in_volume();
        for (Index kd = 0; kd < k; ++kd) {
            for (Index kh = 0; kh < k; ++kh) {
                Index oh_lo, oh_hi;
                detail::valid_range(oh_n, g.height, g.stride, g.padding, kh, oh_lo, oh_hi);
                for (Index kw = 0; kw < k; ++kw, ++row) {
                    Index ow_lo, ow_hi;
                    detail::valid_range(ow_n, g.width, g.stride, g.padding, kw, ow_lo, ow_hi);
                    const Scalar* src_row = col + row * cols;
                    for (Index od = od_begin; od < od_end; ++od) {
                        const Index id = od * g.stride - g.padding + kd;
                        if (id < 0 || id >= g.depth) continue;
                        const Scalar* src_slice = src_row + (od - od_begin) * oh_n * ow_n;
                        Scalar* dst_slice = plane_c + id * g.height * g.width;
                        for (Index oh = oh_lo; oh < oh_hi; ++oh) {
                            const Index ih = oh * g.stride - g.padding + kh;
                            const Scalar* src = src_slice + oh * ow_n;
                            const Index base = ih * g.width - g.padding + kw;
                            for (Index ow = ow_lo; ow < ow_hi; ++ow) dst_slice[base + ow * g.stride] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

namespace detail {

// Stride-1 convolution on a zero-padded copy of the input. With the output
// laid out on the padded (Hp, Wp) grid, every kernel tap is a constant offset
// into the padded input; positions past the valid output rows/columns are
// scratch and get discarded.
struct PaddedLayout {
    Index dp, hp, wp, od_n, oh_n, ow_n, span;

    explicit PaddedLayout(const ConvGeometry& g)
        : dp(g.depth + 2 * g.padding),
          hp(g.height + 2 * g.padding),
          wp(g.width + 2 * g.padding),
          od_n(g.out_depth()),
          oh_n(g.out_height()),
          ow_n(g.out_width()),
          span((od_n - 1) * hp * wp + (oh_n - 1) * wp + ow_n) {}

    Index padded_volume() const { return dp * hp * wp; }
    Index tap_offset(Index kd, Index kh, Index kw) const { return (kd * hp + kh) * wp + kw; }
    Index out_index(Index od, Index oh, Index ow) const { return (od * hp + oh) * wp + ow; }
};

// Span elements per weight-gradient pass so the working set stays cache-resident.
inline constexpr Index kTile = 1024;

template <typename Scalar>
void pad_input(const Scalar* input, const ConvGeometry& g, const PaddedLayout& l, Scalar* padded) {
    std::fill(padded, padded + g.channels * l.padded_volume(), Scalar(0));
    for (Index c = 0; c < g.channels; ++c)
        for (Index d = 0; d < g.depth; ++d)
            for (Index h = 0; h < g.height; ++h) {
                const Scalar* src = input + ((c * g.depth + d) * g.height + h) * g.width;
                Scalar* dst = padded + c * l.padded_volume() + ((d + g.padding) * l.hp + h + g.padding) * l.wp + g.padding;
                std::copy(src, src + g.width, dst);
            }
}

// dst[i] += sum_t weights[t] * src[i + offsets[t]] for i in [0, n), with a
// block of accumulators held in registers across all taps.
template <typename Scalar>
void gather_taps(const Scalar* src, const std::vector<Index>& offsets, const std::vector<Scalar>& weights, Scalar* dst,
                 Index n) {
    constexpr Index B = 32;
    using Block = Eigen::Array<Scalar, B, 1>;
    const auto taps = offsets.size();
    Index i = 0;
    for (; i + B <= n; i += B) {
        Block acc = Block::Zero();
        for (std::size_t t = 0; t < taps; ++t) acc += weights[t] * Eigen::Map<const Block>(src + offsets[t] + i);
        Eigen::Map<Block>(dst + i) += acc;
    }
    for (; i < n; ++i) {
        Scalar acc(0);
        for (std::size_t t = 0; t < taps; ++t) acc += weights[t] * src[offsets[t] + i];
        dst[i] += acc;
    }
}

}  // namespace detail

/// Direct stride-1 convolution of one sample, written to `out`
/// (c_out x out volume). Cheaper than lowering when channel counts are small.
template <typename Scalar>
void conv_direct(const Scalar* input, const Scalar* weight, const ConvGeometry& g, Index c_out, Scalar* out) {
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const detail::PaddedLayout l(g);
    const Index k = g.kernel, taps = k * k * k;
    Vec padded(g.channels * l.padded_volume());
    detail::pad_input(input, g, l, padded.data());

    std::vector<Index> offsets;
    for (Index ci = 0; ci < g.channels; ++ci)
        for (Index kd = 0; kd < k; ++kd)
            for (Index kh = 0; kh < k; ++kh)
                for (Index kw = 0; kw < k; ++kw) offsets.push_back(ci * l.padded_volume() + l.tap_offset(kd, kh, kw));
    Vec acc(l.span);
    for (Index co = 0; co < c_out; ++co) {
        const Scalar* w_co = weight + co * g.channels * taps;
        const std::vector<Scalar> weights(w_co, w_co + g.channels * taps);
        acc.setZero();
        detail::gather_taps(padded.data(), offsets, weights, acc.data(), l.span);
        Scalar* out_c = out + co * l.od_n * l.oh_n * l.ow_n;
        for (Index od = 0; od < l.od_n; ++od)
            for (Index oh = 0; oh < l.oh_n; ++oh) {
                const Scalar* src = acc.data() + l.out_index(od, oh, 0);
                std::copy(src, src + l.ow_n, out_c + (od * l.oh_n + oh) * l.ow_n);
            }
    }
}

/// Gradients of conv_direct for one sample: accumulates into input_grad
/// and weight_grad when they are non-null.
template <typename Scalar>
void conv_direct_backward(const Scalar* input, const Scalar* weight, const Scalar* out_grad, const ConvGeometry& g,
                          Index c_out, Scalar* input_grad, Scalar* weight_grad) {
    using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
    const detail::PaddedLayout l(g);
    const Index k = g.kernel, taps = k * k * k;
    const Index out_vol = l.od_n * l.oh_n * l.ow_n;
    // Output gradient on the padded grid, zero at the scratch positions and
    // preceded by `lead` zeros so reversed tap offsets stay in range.
    const Index lead = l.tap_offset(k - 1, k - 1, k - 1);
    const Index stride = lead + l.padded_volume();
    Vec gy = Vec::Zero(c_out * stride);
    for (Index co = 0; co < c_out; ++co)
        for (Index od = 0; od < l.od_n; ++od)
            for (Index oh = 0; oh < l.oh_n; ++oh) {
                const Scalar* src = out_grad + co * out_vol + (od * l.oh_n + oh) * l.ow_n;
                std::copy(src, src + l.ow_n, gy.data() + co * stride + lead + l.out_index(od, oh, 0));
            }

    if (weight_grad) {
        Vec padded(g.channels * l.padded_volume());
        detail::pad_input(input, g, l, padded.data());
        for (Index s0 = 0; s0 < l.span; s0 += detail::kTile) {
            const Index n = std::min(detail::kTile, l.span - s0);
            for (Index co = 0; co < c_out; ++co) {
                const Eigen::Map<const Vec> gy_c(gy.data() + co * stride + lead + s0, n);
                for (Index ci = 0; ci < g.channels; ++ci) {
                    Scalar* dw = weight_grad + (co * g.channels + ci) * taps;
                    const Scalar* in_c = padded.data() + ci * l.padded_volume() + s0;
                    for (Index kd = 0; kd < k; ++kd)
                        for (Index kh = 0; kh < k; ++kh)
                            for (Index kw = 0; kw < k; ++kw)
                                dw[(kd * k + kh) * k + kw] +=
                                    gy_c.dot(Eigen::Map<const Vec>(in_c + l.tap_offset(kd, kh, kw), n));
                }
            }
        }
    }

    if (input_grad) {
        // Padded input positions covering the real input, first to last.
        const Index first = l.tap_offset(g.padding, g.padding, g.padding);
        const Index count = l.tap_offset(g.padding + g.depth - 1, g.padding + g.height - 1, g.padding + g.width - 1) + 1 - first;
        std::vector<Index> offsets;
        for (Index co = 0; co < c_out; ++co)
            for (Index kd = 0; kd < k; ++kd)
                for (Index kh = 0; kh < k; ++kh)
                    for (Index kw = 0; kw < k; ++kw) offsets.push_back(co * stride + lead + first - l.tap_offset(kd, kh, kw));
        std::vector<Scalar> weights(offsets.size());
        Vec gin(count);
        for (Index ci = 0; ci < g.channels; ++ci) {
            for (Index co = 0; co < c_out; ++co)
                std::copy_n(weight + (co * g.channels + ci) * taps, taps, weights.begin() + co * taps);
            gin.setZero();
            detail::gather_taps(gy.data(), offsets, weights, gin.data(), count);
            for (Index d = 0; d < g.depth; ++d)
                for (Index h = 0; h < g.height; ++h) {
                    const Scalar* src = gin.data() + l.tap_offset(g.padding + d, g.padding + h, g.padding) - first;
                    Scalar* dst = input_grad + ((ci * g.depth + d) * g.height + h) * g.width;
                    for (Index w = 0; w < g.width; ++w) dst[w] += src[w];
                }
        }
    }
}

/// Whether conv_direct is expected to beat lowering + GEMM.
inline bool prefer_direct(const ConvGeometry& g, Index c_out) {
    return g.stride == 1 && g.out_width() >= 8 && g.channels * c_out <= 64;
}

/// Number of output depth slices lowered per chunk so the column buffer stays
/// near `budget` scalars.
inline Index depth_chunk(const ConvGeometry& g, Index budget = Index(1) << 21) {
    const Index per_slice = g.rows() * g.out_plane();
    return std::max<Index>(1, std::min<Index>(g.out_depth(), budget / std::max<Index>(per_slice, 1)));
}

}  // namespace lungnas::kernels
