#pragma once

// Procedural "real" image distribution. Every image is a pure function of a
// WorldConfig, an 8-component condition vector and seeds: the content seed
// fixes blob layout and texture phase, the noise seed fixes the sensor noise.

#include "dfb/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dfb {

inline constexpr std::size_t kConditionDim = 8;
using Condition = std::array<double, kConditionDim>;

enum Attribute : std::size_t {
    kBrightness = 0,
    kBlobCount = 1,
    kOrientation = 2,
    kContrast = 3,
    kSharpness = 4,
    kHighlight = 5,  // binary
    kGradient = 6,
    kTextureScale = 7,
};

const std::array<std::string, kConditionDim>& attribute_names();
void validate_condition(const Condition& c);

struct WorldConfig {
    std::size_t image_size = 64;
    double noise_floor = 0.03;
    // Per-image noise level is noise_floor * (1 + noise_spread * (2u - 1)), u ~ U(0,1).
    double noise_spread = 1.0;
    // Rendering gains; the predefined distribution shifts move these.
    double brightness_offset = 0.0;
    double contrast_gain = 1.0;
    double edge_width_gain = 1.0;
    double texture_amp = 0.08;
    double detail_amp = 0.0;
    double highlight_gain = 1.0;
    double gradient_gain = 1.0;

    void validate() const;
    std::string digest_text() const;
    bool operator==(const WorldConfig&) const = default;
};

// Renders one image [S,S] with pixels clamped to [0,1].
Tensor render_image(const WorldConfig& config, const Condition& condition, std::uint64_t content_seed,
                    std::uint64_t noise_seed);

Tensor sample_real_pixels(const WorldConfig& config, const Condition& condition, std::uint64_t seed);

// Content seed shared by every rendering that derives from `seed`.
std::uint64_t content_seed_of(std::uint64_t seed);

Condition sample_condition(std::uint64_t seed);

// Names accepted by shift_distribution (besides "identity").
const std::vector<std::string>& shift_names();
WorldConfig shift_distribution(const WorldConfig& config, const std::string& variant);

// The eight target prompts available to an attacker.
const std::vector<std::pair<std::string, Condition>>& prompt_pool();

enum class Provenance { Real, FakeBase, FakeCustom, FakeAdversarial };
std::string to_string(Provenance p);

struct LabeledImage {
    Tensor pixels;  // [S,S]
    Condition condition{};
    Provenance provenance = Provenance::Real;
    std::string variant;  // custom generator id for FakeCustom
    std::uint64_t seed = 0;

    bool is_fake() const { return provenance != Provenance::Real; }
};

// Dataset images are 8-bit quantized, as stored on disk.
LabeledImage sample_real(const WorldConfig& config, const Condition& condition, std::uint64_t seed);

struct DatasetSlice {
    std::vector<LabeledImage> images;
    std::size_t real_count() const;
    std::size_t fake_count() const;
};

struct DatasetSplit {
    DatasetSlice train, val, test;
};

// Produces the fake counterpart of a condition from a latent seed.
using FakeMaker = std::function<LabeledImage(const Condition&, std::uint64_t latent_seed)>;

// n_per_class conditions, split 8:1:1. Each condition is rendered once as a
// real image and, when `fake` is set, once through the generator with the
// same content seed. Without `fake` the split is real-only.
DatasetSplit build_split(const WorldConfig& config, std::size_t n_per_class, const FakeMaker& fake,
                         std::uint64_t seed);

// Real images only, for generator / encoder / attacker training.
std::vector<LabeledImage> sample_real_set(const WorldConfig& config, std::size_t n, std::uint64_t seed);

// CSV manifest: path,class,provenance,c0..c7,seed. Writes PGMs under dir.
void write_manifest(const DatasetSplit& split, const std::string& dir);

}  // namespace dfb
