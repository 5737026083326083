#pragma once

// Frequency-domain and residual feature extraction.

#include "dfb/tensor.hpp"

#include <vector>

namespace dfb {

struct DctConfig {
    double log_epsilon = 1e-12;
    void validate() const;
};

// Orthonormal 2-D DCT-II of a square [N,N] image, and its inverse.
Tensor dct2d(const Tensor& image);
Tensor idct2d(const Tensor& coefficients);

// flatten(log(|DCT(x)| + eps)), length N*N.
std::vector<double> log_dct_features(const Tensor& image, const DctConfig& config = {});

// k x k median with edge-clamped borders; k must be odd.
Tensor median_denoise(const Tensor& image, std::size_t window = 3);

// log-DCT features of the noise residual image - median_denoise(image).
std::vector<double> residual_features(const Tensor& image, const DctConfig& config = {});

}  // namespace dfb
