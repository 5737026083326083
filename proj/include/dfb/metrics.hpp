#pragma once

#include "dfb/forensics.hpp"
#include "dfb/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace dfb {

// 100 (R1 - R2) / R1 for recalls given in percent.
double delta_recall(double r1, double r2);

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::size_t total() const { return tp + fp + fn + tn; }
};

// Fake-class scores in percent. A zero denominator reports 0 and sets the flag.
struct Prf {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
    bool undefined = false;
    std::size_t n = 0;
};

Prf precision_recall_f1(const ConfusionCounts& counts);
// labels / predictions: true = fake.
Prf precision_recall_f1(std::span<const bool> truth, std::span<const bool> predicted);

// Cubic polynomial kernel k(u,v) = (u.v / d + offset)^degree.
struct KernelConfig {
    int degree = 3;
    double offset = 1.0;
    std::size_t subset_size = 100;
    std::size_t num_subsets = 10;
    void validate() const;
};

// Row-major feature matrix.
struct FeatureSet {
    std::size_t dim = 0;
    std::vector<double> values;  // count * dim
    std::size_t count() const { return dim ? values.size() / dim : 0; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
    void push(std::span<const double> v);
};

struct KidEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t subset_size = 0;
    std::size_t num_subsets = 0;
};

// Unbiased MMD^2 on one pair of equally sized sets, all points used.
double mmd2_unbiased(const FeatureSet& x, const FeatureSet& y, const KernelConfig& config);

// Mean of mmd2_unbiased over random subsets of size min(subset_size, |X|, |Y|).
// Subset draws depend only on each set's own contents, so kid(X,Y) = kid(Y,X).
KidEstimate kid(const FeatureSet& x, const FeatureSet& y, const KernelConfig& config, std::uint64_t seed);

// Cosine similarity in [-1,1]; throws on a zero-norm vector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Elementwise mean of log(|DCT(x)| + eps) over a set of equal-sized images.
Tensor avg_log_spectrum(std::span<const Tensor> images, const DctConfig& config = {});
// Frobenius distance.
double compare_spectra(const Tensor& a, const Tensor& b);

// Mean log-magnitude at the stride-2 harmonic bands (index N/2 and N-1 along
// either axis) minus the mean over their off-harmonic neighbours.
double harmonic_peak_score(const Tensor& spectrum);

}  // namespace dfb
