#pragma once

#include "dfb/autodiff.hpp"

#include <vector>

namespace dfb::ops {

// Elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var square(const Var& a);

// Reductions to a scalar of shape [1]
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);

// [m,k] x [k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);
// x [N,F], w [O,F], b [O] -> [N,O]
Var linear(const Var& x, const Var& w, const Var& b);
// Concatenates [N,Fi] blocks along the feature axis.
Var concat_features(const std::vector<Var>& parts);

// NCHW convolution with OIKK kernel; output spatial size
// floor((H + 2 pad - K) / stride) + 1.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad);
// Adjoint of conv2d with the same OIKK kernel: maps [N,O,h,w] to
// [N,I,(h-1)*stride - 2 pad + K, ...].
Var conv2d_transpose(const Var& input, const Var& kernel, std::size_t stride, std::size_t pad);
// x [N,C,H,W] + b [C]
Var add_channel_bias(const Var& x, const Var& bias);
// Feature-wise modulation: x * (1 + gamma) + beta with gamma, beta [N,C].
Var film(const Var& x, const Var& gamma, const Var& beta);
// [N,C,H,W] -> [N,C]
Var global_avg_pool(const Var& x);
// Scales the channel vector at each (n,h,w) to unit L2 norm.
Var channel_unit_normalize(const Var& x, double eps = 1e-10);
// x [N,F]: (x - mean) / std with constant per-feature statistics.
Var standardize(const Var& x, const Tensor& mean, const Tensor& stddev);

// Mean softmax cross-entropy; logits [N,K], labels in [0,K).
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);
// Mean binary cross-entropy on logits [N] or [N,1]; targets in [0,1].
Var bce_with_logits(const Var& logits, const std::vector<double>& targets);

}  // namespace dfb::ops
