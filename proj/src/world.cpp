#include "dfb/world.hpp"

#include "dfb/pgm.hpp"
#include "dfb/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace dfb {

const std::array<std::string, kConditionDim>& attribute_names()
{
    static const std::array<std::string, kConditionDim> names = {
        "brightness", "blob_count", "orientation", "contrast",
        "sharpness", "highlight", "gradient", "texture_scale"};
    return names;
}

void validate_condition(const Condition& c)
{
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!(c[i] >= 0.0 && c[i] <= 1.0)) {
            throw std::invalid_argument("condition component " + attribute_names()[i] + " = "
                                        + std::to_string(c[i]) + " outside [0,1]");
        }
    }
}

void WorldConfig::validate() const
{
    if (image_size < 32 || (image_size & (image_size - 1)) != 0) {
        throw std::invalid_argument("world: image_size must be a power of two >= 32, got "
                                    + std::to_string(image_size));
    }
    if (noise_floor < 0.0) throw std::invalid_argument("world: noise_floor must be >= 0");
    if (noise_spread < 0.0 || noise_spread > 1.0) throw std::invalid_argument("world: noise_spread must be in [0,1]");
}

std::string WorldConfig::digest_text() const
{
    return fmt::format("size={};noise={:.17g};spread={:.17g};bright={:.17g};contrast={:.17g};edge={:.17g};texture={:.17g};"
                       "detail={:.17g};highlight={:.17g};gradient={:.17g}",
                       image_size, noise_floor, noise_spread, brightness_offset, contrast_gain, edge_width_gain,
                       texture_amp, detail_amp, highlight_gain, gradient_gain);
}

namespace {

double lerp(double a, double b, double t)
{
    return a + (b - a) * t;
}

struct Blob {
    double cx, cy, radius, amplitude;
};

struct Content {
    std::array<Blob, 4> blobs;
    double texture_phase;
    double detail_phase;
    double detail_angle;
};

Content make_content(std::uint64_t content_seed)
{
    Rng rng(content_seed);
    Content c{};
    for (Blob& b : c.blobs) {
        b.cx = rng.uniform(0.15, 0.85);
        b.cy = rng.uniform(0.15, 0.85);
        b.radius = rng.uniform(0.08, 0.16);
        b.amplitude = rng.uniform(0.6, 1.0);
    }
    c.texture_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.detail_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.detail_angle = rng.uniform(0.0, std::numbers::pi);
    return c;
}

}  // namespace

Tensor render_image(const WorldConfig& config, const Condition& a, std::uint64_t content_seed,
                    std::uint64_t noise_seed)
{
    config.validate();
    validate_condition(a);
    const Content content = make_content(content_seed);
    const std::size_t n = config.image_size;
    const double pi = std::numbers::pi;

    const double base = 0.25 + 0.4 * a[kBrightness] + config.brightness_offset;
    const double contrast = (0.6 + 0.8 * a[kContrast]) * config.contrast_gain;
    const double edge = lerp(0.05, 0.008, a[kSharpness]) * config.edge_width_gain;
    const double theta = a[kOrientation] * pi;
    const double freq = 3.0 + 7.0 * a[kTextureScale];
    const double dir_x = std::cos(theta), dir_y = std::sin(theta);
    const double detail_freq = static_cast<double>(n) / 4.0;
    const double ddx = std::cos(content.detail_angle), ddy = std::sin(content.detail_angle);
    const double highlight = 0.4 * a[kHighlight] * config.highlight_gain;
    const double gradient = 0.3 * a[kGradient] * config.gradient_gain;

    std::array<double, 4> visible{};
    for (std::size_t j = 0; j < visible.size(); ++j) {
        visible[j] = std::clamp(a[kBlobCount] * 4.0 - static_cast<double>(j), 0.0, 1.0);
    }

    Rng noise(noise_seed);
    const double sigma = config.noise_floor * (1.0 + config.noise_spread * (2.0 * noise.uniform() - 1.0));
    Tensor img({n, n});
    for (std::size_t y = 0; y < n; ++y) {
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(n);
        for (std::size_t x = 0; x < n; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(n);
            double blobs = 0.0;
            for (std::size_t j = 0; j < content.blobs.size(); ++j) {
                if (visible[j] == 0.0) continue;
                const Blob& b = content.blobs[j];
                const double d = std::hypot(u - b.cx, v - b.cy);
                blobs += visible[j] * b.amplitude / (1.0 + std::exp((d - b.radius) / edge));
            }
            const double texture
                = config.texture_amp * std::sin(2.0 * pi * freq * (u * dir_x + v * dir_y) + content.texture_phase);
            const double detail = config.detail_amp
                                  * std::sin(2.0 * pi * detail_freq * (u * ddx + v * ddy) + content.detail_phase);
            const double spot = highlight
                                * std::exp(-((u - 0.72) * (u - 0.72) + (v - 0.28) * (v - 0.28)) / (2.0 * 0.05 * 0.05));
            double value = base + contrast * (0.35 * blobs - 0.15 + texture + detail) + gradient * (u - 0.5) + spot;
            if (sigma > 0.0) value += noise.normal(0.0, sigma);
            img[y * n + x] = std::clamp(value, 0.0, 1.0);
        }
    }
    return img;
}

std::uint64_t content_seed_of(std::uint64_t seed)
{
    return derive_seed(seed, "content");
}

Tensor sample_real_pixels(const WorldConfig& config, const Condition& condition, std::uint64_t seed)
{
    return render_image(config, condition, content_seed_of(seed), derive_seed(seed, "noise"));
}

LabeledImage sample_real(const WorldConfig& config, const Condition& condition, std::uint64_t seed)
{
    return {quantize_8bit(sample_real_pixels(config, condition, seed)), condition, Provenance::Real, "", seed};
}

Condition sample_condition(std::uint64_t seed)
{
    Rng rng(derive_seed(seed, "condition"));
    Condition c{};
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = rng.uniform();
    c[kHighlight] = c[kHighlight] < 0.5 ? 0.0 : 1.0;
    return c;
}

const std::vector<std::string>& shift_names()
{
    static const std::vector<std::string> names = {"brightness+", "detail+", "sharpness+", "contrast+",
                                                   "denoise", "texture+", "highlight+", "gradient+"};
    return names;
}

WorldConfig shift_distribution(const WorldConfig& config, const std::string& variant)
{
    WorldConfig out = config;
    if (variant == "identity") return out;
    if (variant == "brightness+") {
        out.brightness_offset += 0.04;
    } else if (variant == "detail+") {
        out.detail_amp += 0.02;
    } else if (variant == "sharpness+") {
        out.edge_width_gain *= 0.5;
    } else if (variant == "contrast+") {
        out.contrast_gain *= 1.15;
    } else if (variant == "denoise") {
        out.noise_floor *= 0.5;
    } else if (variant == "texture+") {
        out.texture_amp *= 1.4;
    } else if (variant == "highlight+") {
        out.highlight_gain *= 1.5;
    } else if (variant == "gradient+") {
        out.gradient_gain *= 1.5;
    } else {
        std::string valid = "identity";
        for (const auto& n : shift_names()) valid += ", " + n;
        throw std::invalid_argument("unknown distribution shift '" + variant + "' (valid: " + valid + ")");
    }
    return out;
}

const std::vector<std::pair<std::string, Condition>>& prompt_pool()
{
    static const std::vector<std::pair<std::string, Condition>> pool = {
        {"bright scene", {0.95, 0.5, 0.5, 0.5, 0.5, 0.0, 0.3, 0.5}},
        {"crowded blobs", {0.5, 1.0, 0.3, 0.6, 0.5, 0.0, 0.3, 0.4}},
        {"vertical texture", {0.5, 0.4, 0.5, 0.5, 0.5, 0.0, 0.3, 0.7}},
        {"high contrast", {0.5, 0.6, 0.2, 1.0, 0.6, 0.0, 0.3, 0.5}},
        {"crisp edges", {0.5, 0.6, 0.7, 0.6, 1.0, 0.0, 0.3, 0.5}},
        {"with highlight", {0.5, 0.5, 0.5, 0.5, 0.5, 1.0, 0.3, 0.5}},
        {"strong gradient", {0.5, 0.5, 0.8, 0.5, 0.5, 0.0, 1.0, 0.5}},
        {"fine texture", {0.4, 0.5, 0.1, 0.5, 0.5, 0.0, 0.3, 1.0}},
    };
    return pool;
}

std::string to_string(Provenance p)
{
    switch (p) {
    case Provenance::Real: return "real";
    case Provenance::FakeBase: return "fake-base";
    case Provenance::FakeCustom: return "fake-custom";
    case Provenance::FakeAdversarial: return "fake-adversarial";
    }
    return "unknown";
}

std::size_t DatasetSlice::real_count() const
{
    return static_cast<std::size_t>(
        std::count_if(images.begin(), images.end(), [](const LabeledImage& im) { return !im.is_fake(); }));
}

std::size_t DatasetSlice::fake_count() const
{
    return images.size() - real_count();
}

DatasetSplit build_split(const WorldConfig& config, std::size_t n_per_class, const FakeMaker& fake,
                         std::uint64_t seed)
{
    config.validate();
    if (n_per_class < 10) {
        throw std::invalid_argument("build_split: n_per_class=" + std::to_string(n_per_class)
                                    + " too small for a balanced 8:1:1 split (need >= 10)");
    }
    const std::size_t n_val = n_per_class / 10;
    const std::size_t n_test = n_per_class / 10;
    const std::size_t n_train = n_per_class - n_val - n_test;

    DatasetSplit split;
    const std::array<std::pair<DatasetSlice*, std::size_t>, 3> slices = {
        std::pair{&split.train, n_train}, std::pair{&split.val, n_val}, std::pair{&split.test, n_test}};
    std::uint64_t slice_tag = 0;
    for (auto [slice, count] : slices) {
        const std::uint64_t slice_seed = derive_seed(seed, ++slice_tag);
        for (std::size_t i = 0; i < count; ++i) {
            const std::uint64_t item_seed = derive_seed(slice_seed, i);
            const Condition cond = sample_condition(item_seed);
            slice->images.push_back(sample_real(config, cond, item_seed));
            if (fake) {
                LabeledImage f = fake(cond, item_seed);
                f.condition = cond;
                slice->images.push_back(std::move(f));
            }
        }
    }
    return split;
}

std::vector<LabeledImage> sample_real_set(const WorldConfig& config, std::size_t n, std::uint64_t seed)
{
    std::vector<LabeledImage> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t s = derive_seed(seed, i);
        out.push_back(sample_real(config, sample_condition(s), s));
    }
    return out;
}

void write_manifest(const DatasetSplit& split, const std::string& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    const fs::path manifest_path = fs::path(dir) / "manifest.csv";
    std::ofstream csv(manifest_path, std::ios::binary);
    if (!csv) throw std::runtime_error("cannot write " + manifest_path.string());
    csv << "path,class,provenance";
    for (const auto& name : attribute_names()) csv << ',' << name;
    csv << ",seed\n";
    const std::array<std::pair<const char*, const DatasetSlice*>, 3> slices = {
        std::pair{"train", &split.train}, std::pair{"val", &split.val}, std::pair{"test", &split.test}};
    for (auto [name, slice] : slices) {
        for (std::size_t i = 0; i < slice->images.size(); ++i) {
            const LabeledImage& im = slice->images[i];
            const std::string rel = fmt::format("images/{}_{:05d}_{}.pgm", name, i, im.is_fake() ? "fake" : "real");
            write_pgm_file(im.pixels, (fs::path(dir) / rel).string());
            csv << rel << ',' << (im.is_fake() ? "fake" : "real") << ',' << to_string(im.provenance);
            for (double c : im.condition) csv << ',' << fmt::format("{:.4f}", c);
            csv << ',' << im.seed << '\n';
        }
    }
    if (!csv) throw std::runtime_error("write failed: " + manifest_path.string());
}

}  // namespace dfb
