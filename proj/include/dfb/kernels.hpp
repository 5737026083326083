#pragma once

// Convolution kernels on raw NCHW / OIKK buffers.
//
// Two implementations share one geometry: `serial` is the direct
// sliding-window reference, `parallel` is the OpenMP version used by the
// autodiff ops. Each parallel loop owns disjoint output slices and keeps the
// serial summation order, so both produce bit-identical results for any
// thread count.

#include <cstddef>
#include <span>

namespace dfb::kernels {

struct ConvGeometry {
    std::size_t batch = 1;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t in_h = 1, in_w = 1;
    std::size_t kernel = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    std::size_t input_size() const { return batch * in_channels * in_h * in_w; }
    std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
    std::size_t weight_size() const { return out_channels * in_channels * kernel * kernel; }
};

// Forward: out = conv(in, w). Backward-input is also the transposed
// convolution forward. Backward-weight accumulates dw from in and dout.
namespace serial {
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout,
                           std::span<const double> w, std::span<double> din);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> dout, std::span<double> dw);
}  // namespace serial

namespace parallel {
void conv2d_forward(const ConvGeometry& g, std::span<const double> in, std::span<const double> w,
                    std::span<double> out);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> dout,
                           std::span<const double> w, std::span<double> din);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> in,
                            std::span<const double> dout, std::span<double> dw);
}  // namespace parallel

}  // namespace dfb::kernels
