#include "dfb/forensics.hpp"
#include "dfb/metrics.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

namespace dfb {
namespace {

using test::random_tensor;

TEST(DeltaRecall, PublishedTriple)
{
    EXPECT_NEAR(delta_recall(99.60, 52.59), 47.20, 0.02);
}

TEST(DeltaRecall, EqualRecallsGiveZero)
{
    EXPECT_EQ(delta_recall(73.5, 73.5), 0.0);
}

TEST(DeltaRecall, NegativeWhenRecallImproves)
{
    EXPECT_LT(delta_recall(50.0, 60.0), 0.0);
}

TEST(DeltaRecall, ZeroBaselineIsAnError)
{
    EXPECT_THROW(delta_recall(0.0, 10.0), std::domain_error);
    EXPECT_THROW(delta_recall(101.0, 10.0), std::domain_error);
}

TEST(DeltaRecall, ScaleConsistent)
{
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const double r1 = rng.uniform(1.0, 50.0), r2 = rng.uniform(0.0, 50.0), k = rng.uniform(0.1, 2.0);
        EXPECT_NEAR(delta_recall(k * r1, k * r2), delta_recall(r1, r2), 1e-9);
    }
}

TEST(Prf, HandCounts)
{
    // tp 8, fp 2, fn 4: P 80, R 66.67, F1 72.73
    const Prf p = precision_recall_f1(ConfusionCounts{8, 2, 4, 6});
    EXPECT_DOUBLE_EQ(p.precision, 80.0);
    EXPECT_NEAR(p.recall, 200.0 / 3.0, 1e-12);
    EXPECT_NEAR(p.f1, 2.0 * 80.0 * (200.0 / 3.0) / (80.0 + 200.0 / 3.0), 1e-12);
    EXPECT_FALSE(p.undefined);
    EXPECT_EQ(p.n, 20u);
}

TEST(Prf, NoPredictedFakesFlagsUndefined)
{
    const Prf p = precision_recall_f1(ConfusionCounts{0, 0, 5, 5});
    EXPECT_TRUE(p.undefined);
    EXPECT_EQ(p.f1, 0.0);
}

FeatureSet features(std::initializer_list<std::vector<double>> rows)
{
    FeatureSet s;
    for (const auto& r : rows) s.push(r);
    return s;
}

TEST(Kid, IdenticalTwoPointSetsGiveExactlyZero)
{
    const FeatureSet x = features({{0.3, -1.2}, {0.3, -1.2}});
    EXPECT_EQ(mmd2_unbiased(x, x, {}), 0.0);
    EXPECT_EQ(kid(x, x, {}, 1).value, 0.0);
}

TEST(Kid, HandDoubleSumOracle)
{
    const std::vector<std::vector<double>> xs{{0.5, -1.0}, {2.0, 0.25}};
    const std::vector<std::vector<double>> ys{{-0.75, 1.5}, {1.0, 1.0}};
    auto k = [](const std::vector<double>& u, const std::vector<double>& v) {
        const double t = (u[0] * v[0] + u[1] * v[1]) / 2.0 + 1.0;
        return t * t * t;
    };
    double kxx = 0.0, kyy = 0.0, kxy = 0.0;
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            if (i != j) kxx += k(xs[i], xs[j]);
            if (i != j) kyy += k(ys[i], ys[j]);
            kxy += k(xs[i], ys[j]);
        }
    const double oracle = kxx / 2.0 + kyy / 2.0 - 2.0 * kxy / 4.0;

    FeatureSet x, y;
    for (const auto& v : xs) x.push(v);
    for (const auto& v : ys) y.push(v);
    EXPECT_NEAR(mmd2_unbiased(x, y, {}), oracle, 1e-12);
    EXPECT_NEAR(kid(x, y, {}, 3).value, oracle, 1e-12);
}

FeatureSet gaussian_cloud(std::size_t n, std::size_t dim, double shift, std::uint64_t seed)
{
    Rng rng(seed);
    FeatureSet s;
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : row) v = rng.normal(shift, 1.0);
        s.push(row);
    }
    return s;
}

TEST(Kid, Symmetric)
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const FeatureSet x = gaussian_cloud(150, 4, 0.0, 10 + seed);
        const FeatureSet y = gaussian_cloud(120, 4, 0.3, 20 + seed);
        EXPECT_EQ(kid(x, y, {}, seed).value, kid(y, x, {}, seed).value);
    }
}

TEST(Kid, SameDistributionWithinThreeStandardErrors)
{
    const FeatureSet x = gaussian_cloud(500, 8, 0.0, 31);
    const FeatureSet y = gaussian_cloud(500, 8, 0.0, 32);
    const KidEstimate e = kid(x, y, {}, 5);
    EXPECT_GT(e.std_error, 0.0);
    EXPECT_LE(std::abs(e.value), 3.0 * e.std_error);
}

TEST(Kid, IncreasesAlongMeanShift)
{
    double k[3] = {0, 0, 0};
    const double shifts[3] = {0.0, 0.3, 0.6};
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const FeatureSet base = gaussian_cloud(500, 8, 0.0, 40 + seed);
        for (int s = 0; s < 3; ++s) k[s] += kid(base, gaussian_cloud(500, 8, shifts[s], 50 + seed), {}, seed).value;
    }
    EXPECT_LT(k[0], k[1]);
    EXPECT_LT(k[1], k[2]);
}

TEST(Kid, TooSmallSetsAreRejected)
{
    const FeatureSet one = features({{1.0, 2.0}});
    const FeatureSet two = features({{1.0, 2.0}, {0.0, 1.0}});
    EXPECT_THROW(kid(one, two, {}, 0), std::invalid_argument);
}

TEST(Dct, TwoByTwoMatchesFormula)
{
    const double a = 0.9, b = -0.3, c = 0.25, d = 1.7;
    const Tensor y = dct2d(Tensor({2, 2}, std::vector<double>{a, b, c, d}));
    EXPECT_NEAR(y[0], (a + b + c + d) / 2.0, 1e-12);
    EXPECT_NEAR(y[1], (a - b + c - d) / 2.0, 1e-12);
    EXPECT_NEAR(y[2], (a + b - c - d) / 2.0, 1e-12);
    EXPECT_NEAR(y[3], (a - b - c + d) / 2.0, 1e-12);
}

TEST(Dct, RoundTripAndParseval)
{
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Tensor x = random_tensor({64, 64}, 1000 + seed, 0.0, 1.0);
        const Tensor y = dct2d(x);
        const Tensor back = idct2d(y);
        double worst = 0.0, ex = 0.0, ey = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) {
            worst = std::max(worst, std::abs(back[i] - x[i]));
            ex += x[i] * x[i];
            ey += y[i] * y[i];
        }
        EXPECT_LT(worst, 1e-9) << "seed " << seed;
        EXPECT_LT(std::abs(ex - ey) / ex, 1e-9) << "seed " << seed;
    }
}

TEST(Dct, ConstantImageHasOnlyDc)
{
    const Tensor y = dct2d(Tensor({8, 8}, 0.5));
    EXPECT_NEAR(y[0], 0.5 * 8.0, 1e-12);
    for (std::size_t i = 1; i < y.numel(); ++i) EXPECT_NEAR(y[i], 0.0, 1e-12);
}

TEST(Dct, NonSquareIsRejected)
{
    EXPECT_THROW(dct2d(Tensor({4, 5})), std::exception);
}

TEST(Median, MatchesBruteForce)
{
    const Tensor x = random_tensor({9, 7}, 77, 0.0, 1.0);
    for (std::size_t k : {1u, 3u, 5u}) {
        const Tensor m = median_denoise(x, k);
        const long long r = static_cast<long long>(k / 2);
        for (long long y = 0; y < 9; ++y)
            for (long long c = 0; c < 7; ++c) {
                std::vector<double> win;
                for (long long dy = -r; dy <= r; ++dy)
                    for (long long dx = -r; dx <= r; ++dx) {
                        const long long yy = std::clamp(y + dy, 0LL, 8LL), xx = std::clamp(c + dx, 0LL, 6LL);
                        win.push_back(x[static_cast<std::size_t>(yy * 7 + xx)]);
                    }
                std::sort(win.begin(), win.end());
                EXPECT_EQ(m[static_cast<std::size_t>(y * 7 + c)], win[win.size() / 2]);
            }
    }
    EXPECT_THROW(median_denoise(x, 4), std::invalid_argument);
}

TEST(Residual, ConstantImageResidualIsFlat)
{
    const std::vector<double> f = residual_features(Tensor({8, 8}, 0.4));
    for (double v : f) EXPECT_DOUBLE_EQ(v, std::log(1e-12));
}

TEST(Spectra, DistanceToSelfIsZeroAndSymmetric)
{
    std::vector<Tensor> a, b;
    for (std::uint64_t s = 0; s < 4; ++s) {
        a.push_back(random_tensor({8, 8}, 200 + s, 0.0, 1.0));
        b.push_back(random_tensor({8, 8}, 300 + s, 0.0, 1.0));
    }
    const Tensor sa = avg_log_spectrum(a), sb = avg_log_spectrum(b);
    EXPECT_EQ(compare_spectra(sa, sa), 0.0);
    EXPECT_EQ(compare_spectra(sa, sb), compare_spectra(sb, sa));
    EXPECT_GT(compare_spectra(sa, sb), 0.0);
}

TEST(Cosine, KnownValues)
{
    const std::vector<double> a{1, 0}, b{0, 2}, c{3, 0};
    EXPECT_NEAR(cosine_similarity(a, b), 0.0, 1e-15);
    EXPECT_NEAR(cosine_similarity(a, c), 1.0, 1e-15);
    const std::vector<double> z{0, 0};
    EXPECT_THROW(cosine_similarity(a, z), std::exception);
}

}  // namespace
}  // namespace dfb
