#pragma once

// The five experiment pipelines and the workspace that caches their
// artifacts as checkpoints under <out_dir>/checkpoints.
//
//   baseline    trains the generator, both encoders and every detector
//   generalize  customizes the generator variants, measures recall loss
//   enhance     residual-augmented DCT and the OR-ensemble on the variants
//   attack      trains the surrogate and crafts the adversarial set
//   harden      adversarial fine-tuning plus an adaptive re-attack
//
// A pipeline builds only the artifacts it owns; anything owned by another
// pipeline must already be cached unless the workspace was opened with
// build_prerequisites.

#include "dfb/attack.hpp"
#include "dfb/checkpoint.hpp"
#include "dfb/config.hpp"
#include "dfb/detector.hpp"
#include "dfb/encoder.hpp"
#include "dfb/generator.hpp"
#include "dfb/metrics.hpp"
#include "dfb/report.hpp"

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfb {

const std::vector<std::string>& pipeline_names();

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingPrerequisiteError : public PipelineError {
public:
    MissingPrerequisiteError(const std::string& artifact, const std::string& producer);
    const std::string& producer() const { return producer_; }

private:
    std::string producer_;
};

struct AttackSet {
    std::vector<AttackInstance> instances;
    std::size_t frozen_violations = 0;
    std::size_t no_noise_violations = 0;
};

class Workspace {
public:
    // `log` receives progress lines; pass nullptr for silence.
    Workspace(ExperimentConfig config, bool build_prerequisites, std::ostream* log = nullptr);

    const ExperimentConfig& config() const { return config_; }
    std::string checkpoint_dir() const;

    // Pipelines allowed to build missing artifacts.
    void allow(const std::string& pipeline) { producers_.insert(pipeline); }

    const ConditionalGenerator& generator();
    const GeneratorTrainReport& generator_report();
    EncoderPtr encoder(EncoderTier tier);
    const DatasetSplit& split();
    const Detector& detector(const std::string& kind);
    std::vector<const Detector*> detectors();
    const ConditionalGenerator& variant(const VariantSpec& v);
    std::size_t variant_trainable_params(const VariantSpec& v);
    // Fakes of the variant on the base test split's conditions and latents.
    const std::vector<LabeledImage>& variant_fakes(const VariantSpec& v);
    const std::vector<LabeledImage>& test_fakes();
    const std::vector<LabeledImage>& test_reals();
    const SurrogateClassifier& surrogate();
    // Held-out scores of the surrogate, recorded when it was trained.
    const Prf& surrogate_test();
    const AttackSet& attack_set();
    const Detector& hardened_detector(const std::string& kind);
    const SurrogateClassifier& adaptive_surrogate();
    const AttackSet& adaptive_attack_set();
    // Adversarial fine-tuning data: train and val slices.
    const DatasetSplit& harden_split();

    // SHA-256 of the cached checkpoint file behind an artifact name.
    std::string checkpoint_digest(const std::string& artifact);

    void log(const std::string& line);

private:
    std::string path_of(const std::string& artifact) const;
    bool can_build(const std::string& producer) const;
    // The cached checkpoint when present and current; nullopt when the
    // artifact may be built here; MissingPrerequisiteError otherwise.
    std::optional<Checkpoint> cached(const std::string& artifact, const std::string& kind, const std::string& digest,
                                     const std::string& producer);
    void store(const std::string& artifact, const Checkpoint& ckpt);
    AttackSet craft(const SurrogateClassifier& m, std::span<const std::uint64_t> latents, std::uint64_t seed,
                    const std::string& artifact, const std::string& digest, const std::string& producer);
    std::vector<std::uint64_t> attack_latents() const;

    ExperimentConfig config_;
    bool build_all_;
    std::ostream* log_;
    std::set<std::string> producers_;

    std::optional<ConditionalGenerator> generator_;
    std::optional<GeneratorTrainReport> generator_report_;
    std::map<EncoderTier, EncoderPtr> encoders_;
    std::optional<DatasetSplit> split_;
    std::map<std::string, Detector> detectors_;
    std::map<std::string, ConditionalGenerator> variants_;
    std::map<std::string, std::size_t> variant_params_;
    std::map<std::string, std::vector<LabeledImage>> variant_fakes_;
    std::optional<std::vector<LabeledImage>> test_fakes_, test_reals_;
    std::optional<SurrogateClassifier> surrogate_, adaptive_surrogate_;
    Prf surrogate_test_;
    std::optional<AttackSet> attack_set_, adaptive_attack_set_;
    std::map<std::string, Detector> hardened_;
    std::optional<DatasetSplit> harden_split_;
    std::map<std::string, std::string> digests_;
};

struct RecallShift {
    std::string detector;
    std::string set;
    double r1 = 0.0, r2 = 0.0, delta_r = 0.0;
};

struct SpectrumEntry {
    std::string name;
    Tensor spectrum;
    double harmonic_peak = 0.0;
    double distance_to_real = 0.0;
};

struct DetectorScore {
    std::string detector;
    Prf test;
};

struct BaselineResults {
    double generator_val_mse = 0.0;
    double generator_train_mse = 0.0;
    std::vector<DetectorScore> detectors;
    KidEstimate kid_real_fake;
    double semantic_real = 0.0, semantic_fake = 0.0;
    std::vector<SpectrumEntry> spectra;  // real, fake
};

struct VariantRecord {
    VariantSpec spec;
    std::size_t trainable_params = 0;
    double kid_custom = 0.0;  // KID(shifted reals, variant fakes)
    double kid_base = 0.0;    // KID(shifted reals, base fakes)
    double semantic = 0.0;
    double semantic_gap = 0.0;  // |semantic - base fakes' semantic|
    bool passes_gates = false;
};

struct GeneralizeResults {
    std::vector<VariantRecord> variants;
    std::vector<RecallShift> shifts;  // detector x variant
    std::map<std::string, double> average_delta_r;
};

struct EnsembleRow {
    std::string set;
    std::vector<double> member_f1;
    double ensemble_f1 = 0.0;
    std::size_t violations = 0;
};

struct EnhanceResults {
    std::vector<std::string> members;
    std::vector<RecallShift> dct, residual;  // per variant
    std::size_t reduced = 0;
    std::vector<EnsembleRow> ensemble;  // base-test, each variant
    double dct_f1_custom = 0.0, ensemble_f1_custom = 0.0;
    std::size_t violations = 0;
};

struct AttackResults {
    Prf surrogate_test;
    std::vector<RecallShift> shifts;  // per detector: x_clean vs x_adv
    double semantic_clean = 0.0, semantic_adv = 0.0;
    KidEstimate kid_fake, kid_baseline;
    std::vector<SpectrumEntry> spectra;  // real, fake, adversarial
    double surrogate_gain = 0.0;  // share of instances with p_real increased
    double trace_monotone = 0.0;  // share of non-increasing consecutive steps
    std::size_t frozen_violations = 0;
    std::size_t no_noise_violations = 0;
    std::map<std::string, std::vector<bool>> labels_clean, labels_adv;  // per detector
};

struct HardenRow {
    std::string detector;
    double delta_r_before = 0.0, delta_r_after = 0.0;
    double f1_before = 0.0, f1_after = 0.0;
    double adv_val_f1 = 0.0;
};

struct HardenResults {
    Prf adaptive_surrogate_test;
    std::vector<HardenRow> rows;
};

BaselineResults compute_baseline(Workspace& ws);
GeneralizeResults compute_generalize(Workspace& ws);
EnhanceResults compute_enhance(Workspace& ws);
AttackResults compute_attack(Workspace& ws);
HardenResults compute_harden(Workspace& ws);

void emit_baseline(Workspace& ws, const BaselineResults& r, ReportWriter& out);
void emit_generalize(Workspace& ws, const GeneralizeResults& r, ReportWriter& out);
void emit_enhance(Workspace& ws, const EnhanceResults& r, ReportWriter& out);
void emit_attack(Workspace& ws, const AttackResults& r, ReportWriter& out);
void emit_harden(Workspace& ws, const HardenResults& r, ReportWriter& out);

// Runs one pipeline and writes its reports to <out_dir>/reports/<name>.
// Unknown names raise PipelineError listing the valid ones.
std::vector<ManifestEntry> run_pipeline(const std::string& name, Workspace& ws);

// Writes the base split as PGMs plus a CSV manifest under <out_dir>/data.
void export_dataset(Workspace& ws);

}  // namespace dfb
