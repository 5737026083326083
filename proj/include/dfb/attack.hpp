#pragma once

// Semantic adversarial attack on detectors through the generator weights.
//
// A frozen surrogate M (linear softmax head on a frozen encoder) scores
// images as real or fake. For each source image the attacker copies the
// generator weights and runs gradient steps on
//   L = gamma * CE(p_M(G(x,p;theta)), real) + delta * perceptual(G(x,p;theta), x')
// where x' is the unmodified generator output. The adversarial image is the
// generator's own output under the updated weights; no pixel perturbation is
// ever added.

#include "dfb/encoder.hpp"
#include "dfb/generator.hpp"
#include "dfb/metrics.hpp"
#include "dfb/optim.hpp"

#include <array>
#include <string>
#include <vector>

namespace dfb {

struct SurrogateClassifier {
    EncoderPtr encoder;
    // feat_mean, feat_std (fixed), head.w [2, D], head.b [2]; class 0 real, 1 fake.
    ParamSet params;

    std::string checksum() const { return params.digest(); }
    std::string descriptor() const;
};

struct SurrogateTrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    // Share of each class held out for the F1 check.
    double test_fraction = 0.2;
};

class AttackPrerequisiteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SurrogateReport {
    Prf test;
};

// Throws AttackPrerequisiteError when held-out F1 is below 80%.
SurrogateClassifier train_surrogate(std::span<const LabeledImage> fakes, std::span<const LabeledImage> reals,
                                    EncoderPtr encoder, const SurrogateTrainConfig& config, std::uint64_t seed,
                                    SurrogateReport* report = nullptr);

// Continues training the head on new data; standardization is kept.
SurrogateClassifier retrain_surrogate(const SurrogateClassifier& surrogate, std::span<const LabeledImage> fakes,
                                      std::span<const LabeledImage> reals, const SurrogateTrainConfig& config,
                                      std::uint64_t seed, SurrogateReport* report = nullptr);

// [N, 2] logits for an embedding batch [N, D].
Var surrogate_logits(const SurrogateClassifier& m, const Var& embedding);
// {p(real), p(fake)} per image.
std::vector<std::array<double, 2>> surrogate_probabilities(const SurrogateClassifier& m,
                                                           std::span<const Tensor> images);

// Sum over encoder taps of the mean squared difference between
// channel-unit-normalized activations.
Var perceptual_loss(const std::vector<Var>& taps_a, const std::vector<Var>& taps_b);
double perceptual_loss(const FrozenEncoder& net, const Tensor& a, const Tensor& b);

struct AttackConfig {
    double gamma = 0.1;
    double delta = 1.0;
    std::size_t iterations = 50;
    OptimizerConfig optimizer{OptimizerKind::SgdMomentum, 1e-3, 0.9};
    bool keep_weights = false;

    void validate() const;
    // Coefficients used against the large encoder tier.
    static AttackConfig large_encoder_preset();
};

struct AttackResult {
    ParamSet theta_adv;
    Tensor x_clean;  // G(x, p; theta)
    Tensor x_adv;    // G(x, p; theta_adv)
    std::vector<double> trace;
};

class AttackAbortedError : public std::runtime_error {
public:
    AttackAbortedError(const std::string& what, std::vector<double> trace)
        : std::runtime_error(what), trace_(std::move(trace))
    {
    }
    const std::vector<double>& trace() const { return trace_; }

private:
    std::vector<double> trace_;
};

// `feature_net` supplies the perceptual taps; it may be the surrogate's encoder.
AttackResult adversarial_update(const ConditionalGenerator& g, const Tensor& source, const Condition& p,
                                const SurrogateClassifier& m, const FrozenEncoder& feature_net,
                                const AttackConfig& config);

struct AttackInstance {
    std::size_t id = 0;
    std::uint64_t latent_seed = 0;
    std::size_t prompt_index = 0;
    Condition condition{};
    Tensor source;
    // Both 8-bit quantized like every dataset image.
    Tensor x_clean;
    Tensor x_adv;
    std::vector<double> trace;
    std::array<double, 2> p_before{};  // surrogate {real, fake} on x_clean
    std::array<double, 2> p_after{};   // on x_adv
    ParamSet theta_adv;                // only with AttackConfig::keep_weights
};

// One instance per latent seed; the target condition is drawn uniformly from
// the pool and the generator weights are reset to g before every attack.
std::vector<AttackInstance> craft_adversarial_set(const ConditionalGenerator& g, const SurrogateClassifier& m,
                                                  const FrozenEncoder& feature_net,
                                                  const std::vector<std::pair<std::string, Condition>>& pool,
                                                  std::span<const std::uint64_t> latent_seeds,
                                                  const AttackConfig& config, std::uint64_t seed);

// Labeled image views of the instances.
std::vector<LabeledImage> adversarial_images(std::span<const AttackInstance> instances);
std::vector<LabeledImage> clean_images(std::span<const AttackInstance> instances);

}  // namespace dfb
