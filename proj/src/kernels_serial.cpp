#include "dfb/kernels.hpp"

#include <algorithm>

namespace dfb::kernels::serial {

namespace {

// Input coordinate for output index o and kernel tap k; false when it
// falls in the zero padding.
bool tap(std::size_t o, std::size_t k, const ConvGeometry& g, std::size_t extent, std::size_t& pos)
{
    const long long p = static_cast<long long>(o * g.stride + k) - static_cast<long long>(g.pad);
    if (p < 0 || p >= static_cast<long long>(extent)) return false;
    pos = static_cast<std::size_t>(p);
    return true;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<double> out)
{
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < g.in_channels; ++i)
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            std::size_t iy;
                            if (!tap(y, ky, g, g.in_h, iy)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                std::size_t ix;
                                if (!tap(x, kx, g, g.in_w, ix)) continue;
                                acc += w[((o * g.in_channels + i) * k + ky) * k + kx]
                                       * in[((n * g.in_channels + i) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                    out[((n * g.out_channels + o) * oh + y) * ow + x] = acc;
                }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout,
                           std::span<const double> w, std::span<double> din)
{
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    std::fill(din.begin(), din.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t i = 0; i < g.in_channels; ++i)
            for (std::size_t o = 0; o < g.out_channels; ++o)
                for (std::size_t ky = 0; ky < k; ++ky)
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const double wv = w[((o * g.in_channels + i) * k + ky) * k + kx];
                        for (std::size_t y = 0; y < oh; ++y) {
                            std::size_t iy;
                            if (!tap(y, ky, g, g.in_h, iy)) continue;
                            for (std::size_t x = 0; x < ow; ++x) {
                                std::size_t ix;
                                if (!tap(x, kx, g, g.in_w, ix)) continue;
                                din[((n * g.in_channels + i) * g.in_h + iy) * g.in_w + ix]
                                    += wv * dout[((n * g.out_channels + o) * oh + y) * ow + x];
                            }
                        }
                    }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> dout, std::span<double> dw)
{
    const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t i = 0; i < g.in_channels; ++i)
            for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                    double acc = 0.0;
                    for (std::size_t n = 0; n < g.batch; ++n)
                        for (std::size_t y = 0; y < oh; ++y) {
                            std::size_t iy;
                            if (!tap(y, ky, g, g.in_h, iy)) continue;
                            for (std::size_t x = 0; x < ow; ++x) {
                                std::size_t ix;
                                if (!tap(x, kx, g, g.in_w, ix)) continue;
                                acc += dout[((n * g.out_channels + o) * oh + y) * ow + x]
                                       * in[((n * g.in_channels + i) * g.in_h + iy) * g.in_w + ix];
                            }
                        }
                    dw[((o * g.in_channels + i) * k + ky) * k + kx] += acc;
                }
}

}  // namespace dfb::kernels::serial
