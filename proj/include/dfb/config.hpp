#pragma once

// Experiment configuration: flat INI sections, every field explicit.
//
// Each pipeline artifact is keyed by a stage digest computed from the
// sections it depends on plus the digests of its upstream stages, so a
// cached checkpoint is reused only when nothing it was built from changed.

#include "dfb/attack.hpp"
#include "dfb/detector.hpp"
#include "dfb/encoder.hpp"
#include "dfb/generator.hpp"
#include "dfb/metrics.hpp"
#include "dfb/world.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfb {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class VariantKind { Lora, Full };

// "lora:<shift>" or "fm:<shift>".
struct VariantSpec {
    VariantKind kind = VariantKind::Lora;
    std::string shift;

    std::string id() const;
    static VariantSpec parse(const std::string& text);
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "dfbench-out";

    WorldConfig world = default_world();
    std::size_t n_per_class = 1000;

    GeneratorArch generator_arch{default_world().image_size};
    GeneratorTrainConfig generator_train;
    std::size_t generator_pairs = 800;
    std::size_t generator_val_pairs = 100;

    EncoderTrainConfig encoder_small = EncoderTrainConfig::for_tier(EncoderTier::Small);
    EncoderTrainConfig encoder_large = EncoderTrainConfig::for_tier(EncoderTier::Large);

    std::vector<std::string> detector_kinds{"dct-lr", "residual-dct-lr", "cnn", "embedding-small", "embedding-large"};
    std::vector<std::string> ensemble{"dct-lr", "embedding-small"};
    std::size_t lr_epochs = DetectorTrainConfig::for_kind(DetectorKind::DctLr).epochs;
    std::size_t cnn_epochs = DetectorTrainConfig::for_kind(DetectorKind::Cnn).epochs;
    std::size_t embedding_epochs = DetectorTrainConfig::for_kind(DetectorKind::Embedding).epochs;

    std::vector<VariantSpec> variants = default_variants();
    std::size_t lora_rank = 4;
    double lora_alpha = 0.5;
    CustomizeConfig customize;
    std::size_t customize_pairs = 300;

    SurrogateTrainConfig surrogate;
    std::size_t surrogate_per_class = 500;
    AttackConfig attack;
    std::size_t attack_instances = 500;

    // Adversarial fine-tuning: attack instances crafted on fresh latents for
    // the defender's new training set, plus disjoint reals.
    std::size_t harden_instances = 500;
    std::size_t harden_epochs = 10;
    double harden_lr_scale = 0.1;

    KernelConfig kid;

    void validate() const;
    // One "section.key = value" line per field, excluding the output
    // directory; floats are written in shortest round-trip form.
    std::string canonical_text() const;
    std::string digest() const;

    // Digests of the artifacts each stage produces.
    std::string generator_digest() const;
    std::string encoder_digest(EncoderTier tier) const;
    std::string detector_digest() const;
    std::string variant_digest(const VariantSpec& v) const;
    std::string attack_digest() const;
    std::string harden_digest() const;

    static WorldConfig default_world();
    static std::vector<VariantSpec> default_variants();
};

// Reads an INI file. Missing keys keep their defaults; unknown sections or
// keys and malformed values raise ConfigError.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& text);

// Full INI rendering, out_dir included; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& config);

// Every accepted "section.key".
std::vector<std::string> config_keys();

}  // namespace dfb
