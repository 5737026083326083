#pragma once

// Frozen feature encoders standing in for pretrained foundation models.
//
// Three stride-2 conv blocks with ReLU. The embedding is the concatenation
// of each block's global-average-pooled activations; the attribute head maps
// it to a predicted condition vector in (0,1)^8. Weights are trained once by
// attribute regression on real images and never change afterwards.

#include "dfb/autodiff.hpp"
#include "dfb/metrics.hpp"
#include "dfb/params.hpp"
#include "dfb/world.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace dfb {

enum class EncoderTier { Small, Large };

std::string to_string(EncoderTier tier);
EncoderTier parse_encoder_tier(const std::string& name);

struct EncoderArch {
    std::size_t image_size = 64;
    std::array<std::size_t, 3> widths{8, 16, 16};

    std::size_t embedding_dim() const { return widths[0] + widths[1] + widths[2]; }
    std::string descriptor() const;
    static EncoderArch parse(const std::string& descriptor);
    static EncoderArch for_tier(EncoderTier tier, std::size_t image_size);
    bool operator==(const EncoderArch&) const = default;
};

struct FrozenEncoder {
    EncoderTier tier = EncoderTier::Small;
    EncoderArch arch;
    ParamSet params;
    std::uint64_t seed = 0;
    std::size_t training_images = 0;

    std::string id() const { return to_string(tier); }
    // SHA-256 of the weights; the frozen contract compares these.
    std::string checksum() const { return params.digest(); }
};

using EncoderPtr = std::shared_ptr<const FrozenEncoder>;

struct EncoderOutputs {
    std::vector<Var> taps;  // one per conv block
    Var embedding;          // [N, D]
};

// The encoder's own weights are bound as constants.
EncoderOutputs encoder_forward(const FrozenEncoder& enc, const Var& images);
// [N, D] embedding -> [N, 8] predicted attributes.
Var attribute_head(const FrozenEncoder& enc, const Var& embedding);

// images [N,1,S,S] -> [N, D]
Tensor embed(const FrozenEncoder& enc, const Tensor& images);
FeatureSet embedding_features(const FrozenEncoder& enc, std::span<const LabeledImage> images);
FeatureSet embedding_features(const FrozenEncoder& enc, std::span<const Tensor> images);
// images [N,1,S,S] -> [N, 8]
Tensor predict_attributes(const FrozenEncoder& enc, const Tensor& images);

struct EncoderTrainConfig {
    std::size_t images = 600;
    std::size_t epochs = 6;
    std::size_t batch_size = 32;
    double learning_rate = 3e-3;

    // Large tier: ten times the data of the small tier.
    static EncoderTrainConfig for_tier(EncoderTier tier);
};

FrozenEncoder train_encoder(EncoderTier tier, const WorldConfig& world, const EncoderTrainConfig& config,
                            std::uint64_t seed);

// Cosine similarity between the encoder's predicted attributes for `image`
// ([S,S]) and the condition p.
double semantic_score(const FrozenEncoder& enc, const Tensor& image, const Condition& p);
std::vector<double> semantic_scores(const FrozenEncoder& enc, std::span<const LabeledImage> images);
double mean_semantic_score(const FrozenEncoder& enc, std::span<const LabeledImage> images);

}  // namespace dfb
