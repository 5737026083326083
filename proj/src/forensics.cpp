#include "dfb/forensics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace dfb {

void DctConfig::validate() const
{
    if (!(log_epsilon > 0.0)) throw std::invalid_argument("dct: log_epsilon must be > 0");
}

namespace {

// Row-major orthonormal DCT-II basis C[k][n]; dct = C x C^T.
const std::vector<double>& dct_basis(std::size_t n)
{
    static std::mutex mutex;
    static std::map<std::size_t, std::unique_ptr<std::vector<double>>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) {
        slot = std::make_unique<std::vector<double>>(n * n);
        const double nn = static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double scale = k == 0 ? std::sqrt(1.0 / nn) : std::sqrt(2.0 / nn);
            for (std::size_t i = 0; i < n; ++i) {
                (*slot)[k * n + i]
                    = scale * std::cos(std::numbers::pi * (2.0 * static_cast<double>(i) + 1.0) * static_cast<double>(k) / (2.0 * nn));
            }
        }
    }
    return *slot;
}

std::size_t square_side(const Tensor& t, const char* op)
{
    if (t.rank() != 2 || t.dim(0) != t.dim(1)) {
        throw ShapeError(std::string(op) + ": expected square [N,N] image, got " + shape_str(t.shape()));
    }
    return t.dim(0);
}

// out = L * x * R where L, R are given as (matrix, transposed?) views of C.
Tensor sandwich(const Tensor& x, const std::vector<double>& c, std::size_t n, bool inverse)
{
    // forward: C x C^T ; inverse: C^T x C
    std::vector<double> tmp(n * n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double l = inverse ? c[i * n + r] : c[r * n + i];
                acc += l * x[i * n + j];
            }
            tmp[r * n + j] = acc;
        }
    Tensor out({n, n});
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t k = 0; k < n; ++k) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double rr = inverse ? c[j * n + k] : c[k * n + j];
                acc += tmp[r * n + j] * rr;
            }
            out[r * n + k] = acc;
        }
    return out;
}

}  // namespace

Tensor dct2d(const Tensor& image)
{
    const std::size_t n = square_side(image, "dct2d");
    return sandwich(image, dct_basis(n), n, false);
}

Tensor idct2d(const Tensor& coefficients)
{
    const std::size_t n = square_side(coefficients, "idct2d");
    return sandwich(coefficients, dct_basis(n), n, true);
}

std::vector<double> log_dct_features(const Tensor& image, const DctConfig& config)
{
    config.validate();
    const Tensor coeff = dct2d(image);
    std::vector<double> out(coeff.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::abs(coeff[i]) + config.log_epsilon);
    return out;
}

Tensor median_denoise(const Tensor& image, std::size_t window)
{
    if (window % 2 == 0) throw std::invalid_argument("median_denoise: window must be odd, got " + std::to_string(window));
    if (image.rank() != 2) throw ShapeError("median_denoise: expected [H,W], got " + shape_str(image.shape()));
    const long long h = static_cast<long long>(image.dim(0)), w = static_cast<long long>(image.dim(1));
    const long long r = static_cast<long long>(window / 2);
    Tensor out(image.shape());
    std::vector<double> buf(window * window);
    for (long long y = 0; y < h; ++y)
        for (long long x = 0; x < w; ++x) {
            std::size_t k = 0;
            for (long long dy = -r; dy <= r; ++dy)
                for (long long dx = -r; dx <= r; ++dx) {
                    const long long yy = std::clamp(y + dy, 0LL, h - 1);
                    const long long xx = std::clamp(x + dx, 0LL, w - 1);
                    buf[k++] = image[static_cast<std::size_t>(yy * w + xx)];
                }
            auto mid = buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2);
            std::nth_element(buf.begin(), mid, buf.end());
            out[static_cast<std::size_t>(y * w + x)] = *mid;
        }
    return out;
}

std::vector<double> residual_features(const Tensor& image, const DctConfig& config)
{
    const Tensor denoised = median_denoise(image, 3);
    Tensor residual(image.shape());
    for (std::size_t i = 0; i < image.numel(); ++i) residual[i] = image[i] - denoised[i];
    return log_dct_features(residual, config);
}

}  // namespace dfb
