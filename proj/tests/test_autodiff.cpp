#include "dfb/gradcheck.hpp"
#include "dfb/kernels.hpp"
#include "dfb/ops.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace dfb {
namespace {

using test::random_tensor;

constexpr double kTol = 1e-4;

// Entries bounded away from zero so relu / leaky_relu kinks are not probed.
Tensor off_kink(Shape shape, std::uint64_t seed)
{
    Tensor t = random_tensor(std::move(shape), seed, 0.2, 1.0);
    Rng rng(seed + 1);
    for (std::size_t i = 0; i < t.numel(); ++i)
        if (rng.uniform() < 0.5) t[i] = -t[i];
    return t;
}

double check(const LossBuilder& loss, std::vector<Tensor> params)
{
    return grad_check(loss, params);
}

// Weighted sum so every output entry receives a distinct gradient.
Var weighted_sum(Graph& g, const Var& v)
{
    const Tensor w = random_tensor(v.shape(), 99, 0.5, 1.5);
    return ops::sum(ops::mul(v, g.constant(w)));
}

TEST(GradCheck, Elementwise)
{
    const Shape s{3, 4};
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::add(p[0], p[1])); },
                    {random_tensor(s, 1), random_tensor(s, 2)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::sub(p[0], p[1])); },
                    {random_tensor(s, 3), random_tensor(s, 4)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::mul(p[0], p[1])); },
                    {random_tensor(s, 5), random_tensor(s, 6)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::scale(p[0], -2.5)); },
                    {random_tensor(s, 7)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::relu(p[0])); }, {off_kink(s, 8)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::leaky_relu(p[0], 0.2)); },
                    {off_kink(s, 9)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::sigmoid(p[0])); },
                    {random_tensor(s, 10, -3, 3)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::tanh(p[0])); },
                    {random_tensor(s, 11, -2, 2)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::square(p[0])); },
                    {random_tensor(s, 12)}),
              kTol);
}

TEST(GradCheck, Reductions)
{
    const Shape s{2, 5};
    EXPECT_LT(check([](Graph&, const auto& p) { return ops::square(ops::sum(p[0])); }, {random_tensor(s, 20)}), kTol);
    EXPECT_LT(check([](Graph&, const auto& p) { return ops::square(ops::mean(p[0])); }, {random_tensor(s, 21)}), kTol);
    EXPECT_LT(check([](Graph&, const auto& p) { return ops::mse(p[0], p[1]); }, {random_tensor(s, 22), random_tensor(s, 23)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::reshape(p[0], {5, 2})); },
                    {random_tensor(s, 24)}),
              kTol);
}

TEST(GradCheck, Dense)
{
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::matmul(p[0], p[1])); },
                    {random_tensor({3, 4}, 30), random_tensor({4, 2}, 31)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::linear(p[0], p[1], p[2])); },
                    {random_tensor({3, 4}, 32), random_tensor({2, 4}, 33), random_tensor({2}, 34)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::concat_features({p[0], p[1]})); },
                    {random_tensor({2, 3}, 35), random_tensor({2, 2}, 36)}),
              kTol);
    const Tensor mean = random_tensor({4}, 37);
    const Tensor sd = random_tensor({4}, 38, 0.5, 2.0);
    EXPECT_LT(check([&](Graph& g, const auto& p) { return weighted_sum(g, ops::standardize(p[0], mean, sd)); },
                    {random_tensor({3, 4}, 39)}),
              kTol);
}

TEST(GradCheck, Convolutions)
{
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u}) {
            EXPECT_LT(check([&](Graph& g, const auto& p) { return weighted_sum(g, ops::conv2d(p[0], p[1], stride, pad)); },
                            {random_tensor({2, 2, 6, 6}, 40 + stride + pad), random_tensor({3, 2, 3, 3}, 50 + stride + pad)}),
                      kTol)
                << "conv2d stride " << stride << " pad " << pad;
            EXPECT_LT(check([&](Graph& g, const auto& p) {
                                return weighted_sum(g, ops::conv2d_transpose(p[0], p[1], stride, pad));
                            },
                            {random_tensor({2, 3, 3, 3}, 60 + stride + pad), random_tensor({3, 2, 4, 4}, 70 + stride + pad)}),
                      kTol)
                << "conv2d_transpose stride " << stride << " pad " << pad;
        }
    }
}

TEST(GradCheck, ChannelOps)
{
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::add_channel_bias(p[0], p[1])); },
                    {random_tensor({2, 3, 2, 2}, 80), random_tensor({3}, 81)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::film(p[0], p[1], p[2])); },
                    {random_tensor({2, 3, 2, 2}, 82), random_tensor({2, 3}, 83), random_tensor({2, 3}, 84)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::global_avg_pool(p[0])); },
                    {random_tensor({2, 3, 3, 3}, 85)}),
              kTol);
    EXPECT_LT(check([](Graph& g, const auto& p) { return weighted_sum(g, ops::channel_unit_normalize(p[0])); },
                    {random_tensor({2, 3, 2, 2}, 86)}),
              kTol);
}

TEST(GradCheck, Losses)
{
    EXPECT_LT(check([](Graph&, const auto& p) { return ops::softmax_cross_entropy(p[0], {0, 2, 1}); },
                    {random_tensor({3, 3}, 90, -2, 2)}),
              kTol);
    EXPECT_LT(check([](Graph&, const auto& p) { return ops::bce_with_logits(p[0], {1.0, 0.0, 0.3, 1.0}); },
                    {random_tensor({4}, 91, -3, 3)}),
              kTol);
}

TEST(GradCheck, SharedSubexpressionAccumulates)
{
    // Checks that a node consumed twice receives both gradient contributions.
    EXPECT_LT(check([](Graph& g, const auto& p) {
                        const Var h = ops::tanh(p[0]);
                        return weighted_sum(g, ops::add(ops::mul(h, h), ops::scale(h, 3.0)));
                    },
                    {random_tensor({2, 3}, 95)}),
              kTol);
}

double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

TEST(ConvKernels, AdjointIdentity)
{
    for (std::size_t stride : {1u, 2u}) {
        for (std::size_t pad : {0u, 1u}) {
            kernels::ConvGeometry g{2, 3, 4, 7, 7, 3, stride, pad};
            const Tensor x = random_tensor({g.input_size()}, 100 + stride + pad);
            const Tensor w = random_tensor({g.weight_size()}, 110 + stride + pad);
            const Tensor y = random_tensor({g.output_size()}, 120 + stride + pad);
            std::vector<double> conv_x(g.output_size()), convt_y(g.input_size());
            kernels::serial::conv2d_forward(g, x.data(), w.data(), conv_x);
            kernels::serial::conv2d_backward_input(g, y.data(), w.data(), convt_y);
            const double lhs = dot(conv_x, y.data());
            const double rhs = dot(x.data(), convt_y);
            EXPECT_LT(std::abs(lhs - rhs), 1e-10) << "stride " << stride << " pad " << pad;
        }
    }
}

TEST(ConvKernels, ForwardMatchesBruteForce)
{
    // 1 x 1 x 3 x 3 input, 2 x 2 kernel, stride 1, no padding.
    kernels::ConvGeometry g{1, 1, 1, 3, 3, 2, 1, 0};
    const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::vector<double> w{1, 0, -1, 2};
    std::vector<double> y(4);
    kernels::serial::conv2d_forward(g, x, w, y);
    // y[i][j] = x[i][j] - x[i+1][j] + 2 x[i+1][j+1]
    EXPECT_DOUBLE_EQ(y[0], 1 - 4 + 2 * 5);
    EXPECT_DOUBLE_EQ(y[1], 2 - 5 + 2 * 6);
    EXPECT_DOUBLE_EQ(y[2], 4 - 7 + 2 * 8);
    EXPECT_DOUBLE_EQ(y[3], 5 - 8 + 2 * 9);
}

TEST(ConvKernels, TransposeOutputSize)
{
    Graph g;
    const Var x = g.constant(random_tensor({1, 2, 5, 5}, 130));
    const Var w = g.constant(random_tensor({2, 3, 4, 4}, 131));
    const Var y = ops::conv2d_transpose(x, w, 2, 1);
    EXPECT_EQ(y.shape(), (Shape{1, 3, 10, 10}));
}

TEST(ConvKernels, SerialAndParallelAreBitIdentical)
{
    for (std::size_t stride : {1u, 2u}) {
        kernels::ConvGeometry g{3, 4, 5, 9, 9, 3, stride, 1};
        const Tensor x = random_tensor({g.input_size()}, 140 + stride);
        const Tensor w = random_tensor({g.weight_size()}, 150 + stride);
        const Tensor dy = random_tensor({g.output_size()}, 160 + stride);
        std::vector<double> ys(g.output_size()), yp(g.output_size());
        kernels::serial::conv2d_forward(g, x.data(), w.data(), ys);
        kernels::parallel::conv2d_forward(g, x.data(), w.data(), yp);
        EXPECT_EQ(ys, yp);
        std::vector<double> dxs(g.input_size()), dxp(g.input_size());
        kernels::serial::conv2d_backward_input(g, dy.data(), w.data(), dxs);
        kernels::parallel::conv2d_backward_input(g, dy.data(), w.data(), dxp);
        EXPECT_EQ(dxs, dxp);
        std::vector<double> dws(g.weight_size()), dwp(g.weight_size());
        kernels::serial::conv2d_backward_weight(g, x.data(), dy.data(), dws);
        kernels::parallel::conv2d_backward_weight(g, x.data(), dy.data(), dwp);
        EXPECT_EQ(dws, dwp);
    }
}

TEST(Graph, NonFiniteValueNamesOp)
{
    Graph g;
    const Var x = g.constant(Tensor({2}, std::vector<double>{1e308, 1e308}));
    try {
        ops::scale(x, 10.0);
        FAIL() << "expected an error";
    } catch (const std::exception& e) {
        EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos) << e.what();
    }
}

TEST(Graph, BackwardTwiceIsRejected)
{
    Tensor p({2}, 1.0);
    p.set_requires_grad(true);
    Graph g;
    const Var loss = ops::sum(g.parameter(p));
    g.backward(loss);
    EXPECT_THROW(g.backward(loss), std::exception);
}

}  // namespace
}  // namespace dfb
