#include "dfb/kernels.hpp"

#include <algorithm>

namespace dfb::kernels::parallel {

namespace {

struct Range {
    std::size_t begin = 0, end = 0;
};

// Output indices o in [0, out_extent) whose tap o*stride + k - pad lands
// inside [0, in_extent).
Range valid_range(std::size_t k, std::size_t stride, std::size_t pad, std::size_t in_extent,
                  std::size_t out_extent)
{
    const long long kk = static_cast<long long>(k), p = static_cast<long long>(pad);
    const long long s = static_cast<long long>(stride), n = static_cast<long long>(in_extent);
    long long lo = 0;
    if (p > kk) lo = (p - kk + s - 1) / s;
    long long hi = n - 1 + p - kk;  // o*s <= hi
    if (hi < 0) return {0, 0};
    hi = hi / s + 1;
    hi = std::min<long long>(hi, static_cast<long long>(out_extent));
    if (hi <= lo) return {0, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<double> out)
{
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    const std::size_t ih = g.in_h, iw = g.in_w, ci = g.in_channels, co = g.out_channels;
    const long long planes = static_cast<long long>(g.batch * co);

#pragma omp parallel for schedule(static)
    for (long long plane = 0; plane < planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / co;
        const std::size_t o = static_cast<std::size_t>(plane) % co;
        double* dst = out.data() + static_cast<std::size_t>(plane) * oh * ow;
        std::fill(dst, dst + oh * ow, 0.0);
        for (std::size_t i = 0; i < ci; ++i) {
            const double* src = in.data() + (n * ci + i) * ih * iw;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const Range ry = valid_range(ky, s, g.pad, ih, oh);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Range rx = valid_range(kx, s, g.pad, iw, ow);
                    const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
                    const double wv = w[((o * ci + i) * k + ky) * k + kx];
                    for (std::size_t y = ry.begin; y < ry.end; ++y) {
                        const double* srow = src + (y * s + ky - g.pad) * iw;
                        double* drow = dst + y * ow;
                        if (s == 1) {
                            for (std::size_t x = rx.begin; x < rx.end; ++x) drow[x] += wv * srow[static_cast<std::ptrdiff_t>(x) + c0];
                        } else {
                            for (std::size_t x = rx.begin; x < rx.end; ++x) drow[x] += wv * srow[static_cast<std::ptrdiff_t>(x * s) + c0];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout,
                           std::span<const double> w, std::span<double> din)
{
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    const std::size_t ih = g.in_h, iw = g.in_w, ci = g.in_channels, co = g.out_channels;
    const long long planes = static_cast<long long>(g.batch * ci);

#pragma omp parallel for schedule(static)
    for (long long plane = 0; plane < planes; ++plane) {
        const std::size_t n = static_cast<std::size_t>(plane) / ci;
        const std::size_t i = static_cast<std::size_t>(plane) % ci;
        double* dst = din.data() + static_cast<std::size_t>(plane) * ih * iw;
        std::fill(dst, dst + ih * iw, 0.0);
        for (std::size_t o = 0; o < co; ++o) {
            const double* src = dout.data() + (n * co + o) * oh * ow;
            for (std::size_t ky = 0; ky < k; ++ky) {
                const Range ry = valid_range(ky, s, g.pad, ih, oh);
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const Range rx = valid_range(kx, s, g.pad, iw, ow);
                    const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
                    const double wv = w[((o * ci + i) * k + ky) * k + kx];
                    for (std::size_t y = ry.begin; y < ry.end; ++y) {
                        double* drow = dst + (y * s + ky - g.pad) * iw;
                        const double* srow = src + y * ow;
                        if (s == 1) {
                            for (std::size_t x = rx.begin; x < rx.end; ++x) drow[static_cast<std::ptrdiff_t>(x) + c0] += wv * srow[x];
                        } else {
                            for (std::size_t x = rx.begin; x < rx.end; ++x) drow[static_cast<std::ptrdiff_t>(x * s) + c0] += wv * srow[x];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> dout, std::span<double> dw)
{
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
    const std::size_t ih = g.in_h, iw = g.in_w, ci = g.in_channels, co = g.out_channels;
    const long long pairs = static_cast<long long>(co * ci);

#pragma omp parallel for schedule(static)
    for (long long pair = 0; pair < pairs; ++pair) {
        const std::size_t o = static_cast<std::size_t>(pair) / ci;
        const std::size_t i = static_cast<std::size_t>(pair) % ci;
        for (std::size_t ky = 0; ky < k; ++ky) {
            const Range ry = valid_range(ky, s, g.pad, ih, oh);
            for (std::size_t kx = 0; kx < k; ++kx) {
                const Range rx = valid_range(kx, s, g.pad, iw, ow);
                const std::ptrdiff_t c0 = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
                double acc = 0.0;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const double* src = in.data() + (n * ci + i) * ih * iw;
                    const double* grad = dout.data() + (n * co + o) * oh * ow;
                    for (std::size_t y = ry.begin; y < ry.end; ++y) {
                        const double* srow = src + (y * s + ky - g.pad) * iw;
                        const double* grow = grad + y * ow;
                        for (std::size_t x = rx.begin; x < rx.end; ++x) acc += grow[x] * srow[static_cast<std::ptrdiff_t>(x * s) + c0];
                    }
                }
                dw[((o * ci + i) * k + ky) * k + kx] += acc;
            }
        }
    }
}

}  // namespace dfb::kernels::parallel
