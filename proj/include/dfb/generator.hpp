#pragma once

// Conditional image-to-image generator and its customizations.
//
// G(x, p; theta) encodes a source image x with two strided convolutions,
// injects the condition p at the bottleneck (feature-wise modulation plus a
// learned spatial map), and decodes with two stride-2 transposed
// convolutions. The transposed convolutions leave the periodic spectral
// fingerprint the frequency detectors key on.

#include "dfb/autodiff.hpp"
#include "dfb/params.hpp"
#include "dfb/world.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dfb {

struct GeneratorArch {
    std::size_t image_size = 64;
    std::size_t enc_channels = 8;
    std::size_t bottleneck_channels = 16;

    std::string descriptor() const;
    static GeneratorArch parse(const std::string& descriptor);
    bool operator==(const GeneratorArch&) const = default;
};

struct ConditionalGenerator {
    GeneratorArch arch;
    ParamSet params;
    std::uint64_t seed = 0;

    static ConditionalGenerator initialize(const GeneratorArch& arch, std::uint64_t seed);
};

// x [N,1,S,S], p [N,8] -> [N,1,S,S] in (0,1).
Var generator_forward(const GeneratorArch& arch, Bindings& w, const Var& x, const Var& p);

// Inference on stacked batches.
Tensor run_generator(const ConditionalGenerator& g, const Tensor& sources, const Tensor& conditions);

// Source image a generation starts from: a base-world rendering of the
// latent seed's content under a seed-drawn condition.
Tensor canvas_image(std::size_t image_size, std::uint64_t latent_seed);

struct TrainingPair {
    Tensor source;
    Condition condition{};
    Tensor target;
};

// Source: canvas of the seed. Target: a real rendering of `world` with the
// same content but an independent condition and noise draw.
std::vector<TrainingPair> make_pairs(const WorldConfig& world, std::size_t count, std::uint64_t seed);

struct GeneratorTrainConfig {
    std::size_t epochs = 15;
    std::size_t batch_size = 16;
    double learning_rate = 2e-3;
    double val_threshold = 0.02;
};

struct GeneratorTrainReport {
    std::vector<double> epoch_loss;
    double train_mse = 0.0;
    double val_mse = 0.0;
    bool below_threshold = false;  // val_mse < GeneratorTrainConfig::val_threshold
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, double last_finite)
        : std::runtime_error(what + " (last finite loss " + std::to_string(last_finite) + ")"), last_finite_(last_finite)
    {
    }
    double last_finite_loss() const { return last_finite_; }

private:
    double last_finite_;
};

ConditionalGenerator train_generator(const std::vector<TrainingPair>& train, const std::vector<TrainingPair>& val,
                                     const GeneratorArch& arch, const GeneratorTrainConfig& config, std::uint64_t seed,
                                     GeneratorTrainReport* report = nullptr);

double reconstruction_mse(const ConditionalGenerator& g, const std::vector<TrainingPair>& pairs);

// Fake image for condition p from the latent seed's canvas, 8-bit quantized.
LabeledImage generate(const ConditionalGenerator& g, const Condition& p, std::uint64_t latent_seed,
                      Provenance provenance = Provenance::FakeBase, const std::string& variant = "");
std::vector<LabeledImage> generate_many(const ConditionalGenerator& g, std::span<const Condition> conditions,
                                        std::span<const std::uint64_t> latent_seeds,
                                        Provenance provenance = Provenance::FakeBase,
                                        const std::string& variant = "");

// Low-rank adapter: per target tensor W (viewed as [rows, numel/rows]) a
// pair A [r, cols], B [rows, r]; the update is alpha * B A.
struct LoraFactor {
    std::string target;
    Tensor a;
    Tensor b;
};

struct LowRankAdapter {
    std::size_t rank = 4;
    std::vector<LoraFactor> factors;

    std::size_t parameter_count() const;
    ParamSet as_params() const;
    static LowRankAdapter from_params(const ParamSet& params, std::size_t rank);
};

const std::vector<std::string>& default_lora_targets();

struct CustomizeConfig {
    std::size_t steps = 150;
    std::size_t batch_size = 16;
    double learning_rate = 2e-3;
    // Scale used while training the adapter.
    double train_alpha = 1.0;
};

// B starts at zero, so an untrained adapter is an exact identity.
LowRankAdapter init_adapter(const ConditionalGenerator& g, std::size_t rank, std::uint64_t seed,
                            const std::vector<std::string>& targets = default_lora_targets());

LowRankAdapter customize_lora(const ConditionalGenerator& g, const std::vector<TrainingPair>& shifted,
                              std::size_t rank, const CustomizeConfig& config, std::uint64_t seed);

// W' = W + alpha * B A on every target; g itself is unchanged.
ConditionalGenerator apply_lora(const ConditionalGenerator& g, const LowRankAdapter& adapter, double alpha);

ConditionalGenerator customize_full(const ConditionalGenerator& g, const std::vector<TrainingPair>& shifted,
                                    const CustomizeConfig& config, std::uint64_t seed);

}  // namespace dfb
