#pragma once

// Deepfake detectors: frequency-feature logistic regressions, a small CNN
// and linear heads on frozen encoder embeddings. Every kind outputs the
// probability that an image is fake; label fake iff score >= threshold.

#include "dfb/encoder.hpp"
#include "dfb/forensics.hpp"
#include "dfb/metrics.hpp"
#include "dfb/optim.hpp"
#include "dfb/params.hpp"
#include "dfb/world.hpp"

#include <string>
#include <vector>

namespace dfb {

enum class DetectorKind { DctLr, ResidualDctLr, Cnn, Embedding };

// Parses "dct-lr", "residual-dct-lr", "cnn", "embedding-small",
// "embedding-large" (or "embedding(small)").
struct DetectorSpec {
    DetectorKind kind = DetectorKind::DctLr;
    std::string encoder_id;  // embedding kind only

    std::string id() const;
    static DetectorSpec parse(const std::string& text);
};

struct Detector {
    DetectorSpec spec;
    std::size_t image_size = 0;
    DctConfig dct;
    EncoderPtr encoder;  // embedding kind only
    ParamSet params;
    double threshold = 0.5;

    std::string id() const { return spec.id(); }
    std::string descriptor() const;
};

struct DetectorTrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 64;
    OptimizerConfig optimizer;

    static DetectorTrainConfig for_kind(DetectorKind kind);
};

struct DetectorTrainSummary {
    Prf validation;
    std::string warning;  // set when validation F1 < 60%
};

// `encoder` is required for the embedding kind and ignored otherwise.
Detector train_detector(const DetectorSpec& spec, const DatasetSplit& split, const DetectorTrainConfig& config,
                        std::uint64_t seed, EncoderPtr encoder = nullptr, DetectorTrainSummary* summary = nullptr);

// Continues training from the detector's weights on `train`; feature
// standardization statistics are kept.
Detector adversarial_finetune(const Detector& detector, const DatasetSlice& train, const DatasetSlice& val,
                              const DetectorTrainConfig& config, std::uint64_t seed,
                              DetectorTrainSummary* summary = nullptr);

struct Prediction {
    double score = 0.0;
    bool fake = false;
};

Prediction predict(const Detector& detector, const Tensor& image);
std::vector<Prediction> predict_batch(const Detector& detector, std::span<const Tensor> images);
std::vector<Prediction> predict_batch(const Detector& detector, std::span<const LabeledImage> images);

// Fake-class precision / recall / F1 in percent.
Prf evaluate(const Detector& detector, std::span<const LabeledImage> images);
// Percentage of fake images flagged fake.
double fake_recall(const Detector& detector, std::span<const LabeledImage> fakes);

// OR over member labels.
bool ensemble_predict(std::span<const Detector* const> members, const Tensor& image);
std::vector<bool> ensemble_predict_batch(std::span<const Detector* const> members,
                                         std::span<const LabeledImage> images);
Prf evaluate_ensemble(std::span<const Detector* const> members, std::span<const LabeledImage> images);

}  // namespace dfb
