#include "dfb/metrics.hpp"

#include "dfb/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace dfb {

double delta_recall(double r1, double r2)
{
    if (r1 == 0.0) throw std::domain_error("delta_recall: R1 is zero");
    if (r1 < 0.0 || r1 > 100.0 || r2 < 0.0 || r2 > 100.0) {
        throw std::domain_error("delta_recall: recalls must be percentages in [0,100]");
    }
    return 100.0 * (r1 - r2) / r1;
}

Prf precision_recall_f1(const ConfusionCounts& c)
{
    Prf out;
    out.n = c.total();
    const double tp = static_cast<double>(c.tp);
    if (c.tp + c.fp == 0) {
        out.undefined = true;
    } else {
        out.precision = 100.0 * tp / static_cast<double>(c.tp + c.fp);
    }
    if (c.tp + c.fn == 0) {
        out.undefined = true;
    } else {
        out.recall = 100.0 * tp / static_cast<double>(c.tp + c.fn);
    }
    if (out.precision + out.recall == 0.0) {
        out.undefined = true;
    } else {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

Prf precision_recall_f1(std::span<const bool> truth, std::span<const bool> predicted)
{
    if (truth.size() != predicted.size()) throw std::invalid_argument("precision_recall_f1: size mismatch");
    if (truth.empty()) throw std::invalid_argument("precision_recall_f1: empty evaluation set");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] && predicted[i]) ++c.tp;
        else if (!truth[i] && predicted[i]) ++c.fp;
        else if (truth[i] && !predicted[i]) ++c.fn;
        else ++c.tn;
    }
    return precision_recall_f1(c);
}

void KernelConfig::validate() const
{
    if (degree < 1) throw std::invalid_argument("kid: kernel degree must be >= 1");
    if (subset_size < 2) throw std::invalid_argument("kid: subset size must be >= 2");
    if (num_subsets < 1) throw std::invalid_argument("kid: need at least one subset");
}

void FeatureSet::push(std::span<const double> v)
{
    if (dim == 0) dim = v.size();
    if (v.size() != dim) throw ShapeError("FeatureSet: feature length mismatch");
    values.insert(values.end(), v.begin(), v.end());
}

namespace {

double kernel(std::span<const double> u, std::span<const double> v, const KernelConfig& cfg)
{
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
    const double base = dot / static_cast<double>(u.size()) + cfg.offset;
    double out = 1.0;
    for (int i = 0; i < cfg.degree; ++i) out *= base;
    return out;
}

double within_sum(const FeatureSet& s, std::span<const std::size_t> idx, const KernelConfig& cfg)
{
    double acc = 0.0;
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b) acc += kernel(s.row(idx[a]), s.row(idx[b]), cfg);
    return 2.0 * acc;
}

double mmd2_indexed(const FeatureSet& x, std::span<const std::size_t> ix, const FeatureSet& y,
                    std::span<const std::size_t> iy, const KernelConfig& cfg)
{
    const double m = static_cast<double>(ix.size()), n = static_cast<double>(iy.size());
    const double kxx = within_sum(x, ix, cfg) / (m * (m - 1.0));
    const double kyy = within_sum(y, iy, cfg) / (n * (n - 1.0));
    double kxy = 0.0;
    for (std::size_t a : ix)
        for (std::size_t b : iy) kxy += kernel(x.row(a), y.row(b), cfg);
    return (kxx + kyy) - 2.0 * kxy / (m * n);
}

std::uint64_t content_hash(const FeatureSet& s)
{
    std::uint64_t h = 0xCBF29CE484222325ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(s.values.data());
    for (std::size_t i = 0; i < s.values.size() * sizeof(double); ++i) {
        h ^= bytes[i];
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::vector<std::size_t> draw_subset(std::size_t n, std::size_t m, std::uint64_t seed)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (m == n) return idx;
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
    idx.resize(m);
    return idx;
}

}  // namespace

double mmd2_unbiased(const FeatureSet& x, const FeatureSet& y, const KernelConfig& config)
{
    config.validate();
    if (x.count() < 2 || y.count() < 2) throw std::invalid_argument("mmd2_unbiased: each set needs >= 2 points");
    if (x.dim != y.dim) throw ShapeError("mmd2_unbiased: feature dims differ");
    std::vector<std::size_t> ix(x.count()), iy(y.count());
    std::iota(ix.begin(), ix.end(), 0);
    std::iota(iy.begin(), iy.end(), 0);
    return mmd2_indexed(x, ix, y, iy, config);
}

KidEstimate kid(const FeatureSet& x, const FeatureSet& y, const KernelConfig& config, std::uint64_t seed)
{
    config.validate();
    if (x.dim != y.dim) throw ShapeError("kid: feature dims differ");
    const std::size_t m = std::min({config.subset_size, x.count(), y.count()});
    if (m < 2) {
        throw std::invalid_argument("kid: sets too small (" + std::to_string(x.count()) + ", "
                                    + std::to_string(y.count()) + "), need >= 2 each");
    }
    const std::uint64_t hx = content_hash(x), hy = content_hash(y);
    std::vector<double> estimates;
    for (std::size_t s = 0; s < config.num_subsets; ++s) {
        const auto ix = draw_subset(x.count(), m, derive_seed(seed ^ hx, s));
        const auto iy = draw_subset(y.count(), m, derive_seed(seed ^ hy, s));
        // Canonical argument order keeps the result exactly symmetric.
        const bool swap = hx > hy;
        estimates.push_back(swap ? mmd2_indexed(y, iy, x, ix, config) : mmd2_indexed(x, ix, y, iy, config));
    }
    KidEstimate out;
    out.subset_size = m;
    out.num_subsets = estimates.size();
    const double k = static_cast<double>(estimates.size());
    out.value = std::accumulate(estimates.begin(), estimates.end(), 0.0) / k;
    if (estimates.size() > 1) {
        double var = 0.0;
        for (double e : estimates) var += (e - out.value) * (e - out.value);
        var /= (k - 1.0);
        out.std_error = std::sqrt(var / k);
    }
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) throw std::domain_error("cosine_similarity: zero-norm vector");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Tensor avg_log_spectrum(std::span<const Tensor> images, const DctConfig& config)
{
    if (images.empty()) throw std::invalid_argument("avg_log_spectrum: empty image set");
    const Shape shape = images.front().shape();
    Tensor acc(shape);
    for (const Tensor& im : images) {
        if (im.shape() != shape) {
            throw ShapeError("avg_log_spectrum: size mismatch " + shape_str(im.shape()) + " vs " + shape_str(shape));
        }
        const auto f = log_dct_features(im, config);
        for (std::size_t i = 0; i < f.size(); ++i) acc[i] += f[i];
    }
    for (double& v : acc.data()) v /= static_cast<double>(images.size());
    return acc;
}

double compare_spectra(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("compare_spectra: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc);
}

double harmonic_peak_score(const Tensor& spectrum)
{
    if (spectrum.rank() != 2 || spectrum.dim(0) != spectrum.dim(1) || spectrum.dim(0) < 8) {
        throw ShapeError("harmonic_peak_score: expected square spectrum >= 8, got " + shape_str(spectrum.shape()));
    }
    const std::size_t n = spectrum.dim(0);
    std::vector<double> profile(n, 0.0);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            profile[r] += spectrum[r * n + c] / (2.0 * static_cast<double>(n));
            profile[c] += spectrum[r * n + c] / (2.0 * static_cast<double>(n));
        }
    const std::size_t half = n / 2;
    const double mid_peak = profile[half] - 0.5 * (profile[half - 2] + profile[half + 2]);
    const double top_peak = profile[n - 1] - profile[n - 3];
    return 0.5 * (mid_peak + top_peak);
}

}  // namespace dfb
