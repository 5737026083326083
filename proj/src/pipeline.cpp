#include "dfb/pipeline.hpp"

#include "dfb/batch.hpp"
#include "dfb/checkpoint.hpp"
#include "dfb/digest.hpp"
#include "dfb/forensics.hpp"
#include "dfb/pgm.hpp"
#include "dfb/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <numeric>
#include <ostream>

namespace dfb {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kShortDigest = 12;

std::string file_stem(const std::string& artifact)
{
    std::string out = artifact;
    std::replace(out.begin(), out.end(), ':', '-');
    return out;
}

std::vector<Tensor> pixels_of(std::span<const LabeledImage> images)
{
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const auto& im : images) out.push_back(im.pixels);
    return out;
}

std::vector<LabeledImage> with_reals(std::span<const LabeledImage> reals, std::span<const LabeledImage> fakes)
{
    std::vector<LabeledImage> out(reals.begin(), reals.end());
    out.insert(out.end(), fakes.begin(), fakes.end());
    return out;
}

RecallShift recall_shift(const Detector& d, const std::string& set, std::span<const LabeledImage> before,
                         std::span<const LabeledImage> after)
{
    RecallShift s;
    s.detector = d.id();
    s.set = set;
    s.r1 = fake_recall(d, before);
    s.r2 = fake_recall(d, after);
    if (s.r1 == 0.0) {
        throw PipelineError("detector '" + s.detector + "' has zero fake recall on the clean images for '" + set +
                            "'; delta recall is undefined");
    }
    s.delta_r = delta_recall(s.r1, s.r2);
    return s;
}

DetectorTrainConfig detector_config(const ExperimentConfig& c, DetectorKind kind)
{
    DetectorTrainConfig d = DetectorTrainConfig::for_kind(kind);
    switch (kind) {
    case DetectorKind::DctLr:
    case DetectorKind::ResidualDctLr: d.epochs = c.lr_epochs; break;
    case DetectorKind::Cnn: d.epochs = c.cnn_epochs; break;
    case DetectorKind::Embedding: d.epochs = c.embedding_epochs; break;
    }
    return d;
}

std::string join_u64(std::span<const std::uint64_t> values)
{
    std::string out;
    for (auto v : values) out += (out.empty() ? "" : ",") + std::to_string(v);
    return out;
}

std::vector<std::uint64_t> split_u64(const std::string& text)
{
    std::vector<std::uint64_t> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t comma = std::min(text.find(',', pos), text.size());
        out.push_back(std::stoull(text.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

std::string prf_text(const Prf& p)
{
    return fmt::format("{},{},{},{}", p.precision, p.recall, p.f1, p.n);
}

Prf prf_from_text(const std::string& text)
{
    Prf p;
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf,%zu", &p.precision, &p.recall, &p.f1, &p.n) != 4) {
        throw CheckpointMismatchError("checkpoint: malformed score record '" + text + "'");
    }
    return p;
}

Checkpoint attack_set_checkpoint(const AttackSet& set, std::size_t image_size, std::uint64_t seed,
                                 const std::string& digest)
{
    const std::size_t n = set.instances.size();
    const std::size_t steps = n ? set.instances.front().trace.size() : 0;
    const std::size_t px = image_size * image_size;
    Tensor clean({n, image_size, image_size}), adv({n, image_size, image_size}), cond({n, kConditionDim}),
        prompt({n}), before({n, 2}), after({n, 2}), trace({n, std::max<std::size_t>(steps, 1)});
    std::vector<std::uint64_t> latents;
    for (std::size_t i = 0; i < n; ++i) {
        const AttackInstance& a = set.instances[i];
        std::copy(a.x_clean.data().begin(), a.x_clean.data().end(), clean.data().begin() + i * px);
        std::copy(a.x_adv.data().begin(), a.x_adv.data().end(), adv.data().begin() + i * px);
        std::copy(a.condition.begin(), a.condition.end(), cond.data().begin() + i * kConditionDim);
        std::copy(a.trace.begin(), a.trace.end(), trace.data().begin() + i * trace.dim(1));
        prompt[i] = static_cast<double>(a.prompt_index);
        before[i * 2] = a.p_before[0];
        before[i * 2 + 1] = a.p_before[1];
        after[i * 2] = a.p_after[0];
        after[i * 2 + 1] = a.p_after[1];
        latents.push_back(a.latent_seed);
    }
    Checkpoint c;
    c.arch = fmt::format("attackset:v1:n={}:size={}:steps={}", n, image_size, steps);
    c.seed = seed;
    c.config_digest = digest;
    c.metadata = {{"latent_seeds", join_u64(latents)},
                  {"frozen_violations", std::to_string(set.frozen_violations)},
                  {"no_noise_violations", std::to_string(set.no_noise_violations)}};
    for (auto& [name, t] : std::vector<std::pair<std::string, Tensor>>{
             {"x_clean", clean}, {"x_adv", adv}, {"conditions", cond}, {"prompts", prompt},
             {"p_before", before}, {"p_after", after}, {"trace", trace}})
        c.tensors.add(name, std::move(t));
    return c;
}

AttackSet attack_set_from(const Checkpoint& c)
{
    std::size_t n = 0, size = 0, steps = 0;
    if (std::sscanf(c.arch.c_str(), "attackset:v1:n=%zu:size=%zu:steps=%zu", &n, &size, &steps) != 3) {
        throw CheckpointMismatchError("checkpoint: malformed attack set descriptor '" + c.arch + "'");
    }
    const auto latents = split_u64(c.meta("latent_seeds"));
    if (latents.size() != n) throw CheckpointMismatchError("checkpoint: attack set latent seed count mismatch");
    AttackSet set;
    set.frozen_violations = std::stoull(c.meta("frozen_violations"));
    set.no_noise_violations = std::stoull(c.meta("no_noise_violations"));
    const std::size_t px = size * size;
    const auto& clean = c.tensors.at("x_clean");
    const auto& adv = c.tensors.at("x_adv");
    const auto& cond = c.tensors.at("conditions");
    const auto& trace = c.tensors.at("trace");
    for (std::size_t i = 0; i < n; ++i) {
        AttackInstance a;
        a.id = i;
        a.latent_seed = latents[i];
        a.prompt_index = static_cast<std::size_t>(c.tensors.at("prompts")[i]);
        std::copy_n(cond.data().begin() + i * kConditionDim, kConditionDim, a.condition.begin());
        a.source = canvas_image(size, a.latent_seed);
        a.x_clean = Tensor({size, size}, {clean.data().begin() + i * px, clean.data().begin() + (i + 1) * px});
        a.x_adv = Tensor({size, size}, {adv.data().begin() + i * px, adv.data().begin() + (i + 1) * px});
        a.trace.assign(trace.data().begin() + i * trace.dim(1), trace.data().begin() + i * trace.dim(1) + steps);
        a.p_before = {c.tensors.at("p_before")[i * 2], c.tensors.at("p_before")[i * 2 + 1]};
        a.p_after = {c.tensors.at("p_after")[i * 2], c.tensors.at("p_after")[i * 2 + 1]};
        set.instances.push_back(std::move(a));
    }
    return set;
}

std::vector<SpectrumEntry> spectra_of(const std::vector<std::pair<std::string, std::vector<Tensor>>>& sets)
{
    std::vector<SpectrumEntry> out;
    for (const auto& [name, images] : sets) {
        SpectrumEntry e;
        e.name = name;
        e.spectrum = avg_log_spectrum(images);
        e.harmonic_peak = harmonic_peak_score(e.spectrum);
        out.push_back(std::move(e));
    }
    for (auto& e : out) e.distance_to_real = compare_spectra(e.spectrum, out.front().spectrum);
    return out;
}

Prf score_labels(const std::vector<bool>& truth, const std::vector<bool>& predicted)
{
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) {
            predicted[i] ? ++c.tp : ++c.fn;
        } else {
            predicted[i] ? ++c.fp : ++c.tn;
        }
    }
    return precision_recall_f1(c);
}

double mean_of(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

const std::vector<std::string>& pipeline_names()
{
    static const std::vector<std::string> names = {"baseline", "generalize", "enhance", "attack", "harden"};
    return names;
}

MissingPrerequisiteError::MissingPrerequisiteError(const std::string& artifact, const std::string& producer)
    : PipelineError("missing prerequisite " + artifact + "; run the '" + producer + "' pipeline first"),
      producer_(producer)
{
}

Workspace::Workspace(ExperimentConfig config, bool build_prerequisites, std::ostream* log)
    : config_(std::move(config)), build_all_(build_prerequisites), log_(log)
{
    config_.validate();
}

std::string Workspace::checkpoint_dir() const
{
    return (fs::path(config_.out_dir) / "checkpoints").string();
}

std::string Workspace::path_of(const std::string& artifact) const
{
    return (fs::path(checkpoint_dir()) / (file_stem(artifact) + ".ckpt")).string();
}

bool Workspace::can_build(const std::string& producer) const
{
    return build_all_ || producers_.count(producer) > 0;
}

void Workspace::log(const std::string& line)
{
    if (log_) *log_ << line << std::endl;
}

std::optional<Checkpoint> Workspace::cached(const std::string& artifact, const std::string& kind,
                                            const std::string& digest, const std::string& producer)
{
    const std::string path = path_of(artifact);
    if (fs::exists(path)) {
        Checkpoint c = load_checkpoint(path, kind);
        if (c.config_digest == digest) return c;
        if (!can_build(producer)) {
            throw MissingPrerequisiteError("'" + artifact + "' (" + path + " was built from a different configuration)",
                                           producer);
        }
        log("  " + artifact + ": cached checkpoint is stale, rebuilding");
        return std::nullopt;
    }
    if (!can_build(producer)) throw MissingPrerequisiteError("'" + artifact + "' (" + path + ")", producer);
    return std::nullopt;
}

void Workspace::store(const std::string& artifact, const Checkpoint& ckpt)
{
    std::error_code ec;
    fs::create_directories(checkpoint_dir(), ec);
    if (ec) throw std::runtime_error("cannot create '" + checkpoint_dir() + "': " + ec.message());
    save_checkpoint(ckpt, path_of(artifact));
    digests_.erase(artifact);
}

std::string Workspace::checkpoint_digest(const std::string& artifact)
{
    auto it = digests_.find(artifact);
    if (it == digests_.end()) it = digests_.emplace(artifact, checkpoint_file_digest(path_of(artifact))).first;
    return it->second;
}

const ConditionalGenerator& Workspace::generator()
{
    if (generator_) return *generator_;
    const std::string digest = config_.generator_digest();
    if (auto c = cached("generator", "generator", digest, "baseline")) {
        generator_ = generator_from_checkpoint(*c);
        return *generator_;
    }
    log(fmt::format("training generator ({} pairs, {} epochs)", config_.generator_pairs, config_.generator_train.epochs));
    const auto train = make_pairs(config_.world, config_.generator_pairs, derive_seed(config_.seed, "generator-pairs"));
    const auto val = make_pairs(config_.world, config_.generator_val_pairs, derive_seed(config_.seed, "generator-val"));
    GeneratorTrainReport report;
    ConditionalGenerator g = train_generator(train, val, config_.generator_arch, config_.generator_train,
                                             derive_seed(config_.seed, "generator"), &report);
    if (!report.below_threshold) {
        throw PipelineError(fmt::format("generator validation MSE {:.5f} is above the threshold {}", report.val_mse,
                                        config_.generator_train.val_threshold));
    }
    store("generator", to_checkpoint(g, digest));
    generator_ = std::move(g);
    generator_report_ = report;
    return *generator_;
}

const GeneratorTrainReport& Workspace::generator_report()
{
    if (generator_report_) return *generator_report_;
    const ConditionalGenerator& g = generator();
    if (!generator_report_) {
        GeneratorTrainReport r;
        r.train_mse = reconstruction_mse(
            g, make_pairs(config_.world, config_.generator_pairs, derive_seed(config_.seed, "generator-pairs")));
        r.val_mse = reconstruction_mse(
            g, make_pairs(config_.world, config_.generator_val_pairs, derive_seed(config_.seed, "generator-val")));
        r.below_threshold = r.val_mse < config_.generator_train.val_threshold;
        generator_report_ = r;
    }
    return *generator_report_;
}

EncoderPtr Workspace::encoder(EncoderTier tier)
{
    if (auto it = encoders_.find(tier); it != encoders_.end()) return it->second;
    const std::string artifact = "encoder-" + to_string(tier);
    const std::string digest = config_.encoder_digest(tier);
    EncoderPtr enc;
    if (auto c = cached(artifact, "encoder", digest, "baseline")) {
        enc = std::make_shared<const FrozenEncoder>(encoder_from_checkpoint(*c));
    } else {
        const EncoderTrainConfig& tc = tier == EncoderTier::Small ? config_.encoder_small : config_.encoder_large;
        log(fmt::format("training {} encoder ({} images, {} epochs)", to_string(tier), tc.images, tc.epochs));
        auto trained = std::make_shared<const FrozenEncoder>(
            train_encoder(tier, config_.world, tc, derive_seed(config_.seed, artifact)));
        store(artifact, to_checkpoint(*trained, digest));
        enc = trained;
    }
    encoders_.emplace(tier, enc);
    return enc;
}

const DatasetSplit& Workspace::split()
{
    if (split_) return *split_;
    const ConditionalGenerator& g = generator();
    log(fmt::format("building split ({} per class)", config_.n_per_class));
    split_ = build_split(config_.world, config_.n_per_class,
                         [&g](const Condition& p, std::uint64_t latent) { return generate(g, p, latent); },
                         derive_seed(config_.seed, "split"));
    return *split_;
}

const std::vector<LabeledImage>& Workspace::test_fakes()
{
    if (!test_fakes_) {
        test_fakes_.emplace();
        for (const auto& im : split().test.images)
            if (im.is_fake()) test_fakes_->push_back(im);
    }
    return *test_fakes_;
}

const std::vector<LabeledImage>& Workspace::test_reals()
{
    if (!test_reals_) {
        test_reals_.emplace();
        for (const auto& im : split().test.images)
            if (!im.is_fake()) test_reals_->push_back(im);
    }
    return *test_reals_;
}

const Detector& Workspace::detector(const std::string& kind)
{
    const DetectorSpec spec = DetectorSpec::parse(kind);
    const std::string id = spec.id();
    if (auto it = detectors_.find(id); it != detectors_.end()) return it->second;
    const auto& kinds = config_.detector_kinds;
    if (std::none_of(kinds.begin(), kinds.end(), [&](const std::string& k) { return DetectorSpec::parse(k).id() == id; })) {
        throw PipelineError("detector '" + id + "' is not listed in detectors.kinds");
    }
    const std::string artifact = "detector-" + id;
    const std::string digest = config_.detector_digest();
    EncoderPtr enc = spec.kind == DetectorKind::Embedding ? encoder(parse_encoder_tier(spec.encoder_id)) : nullptr;
    Detector d;
    if (auto c = cached(artifact, "detector", digest, "baseline")) {
        d = detector_from_checkpoint(*c, enc);
    } else {
        log("training detector " + id);
        DetectorTrainSummary summary;
        d = train_detector(spec, split(), detector_config(config_, spec.kind), derive_seed(config_.seed, artifact), enc,
                           &summary);
        if (!summary.warning.empty()) log("  warning: " + summary.warning);
        store(artifact, to_checkpoint(d, derive_seed(config_.seed, artifact), digest));
    }
    return detectors_.emplace(id, std::move(d)).first->second;
}

std::vector<const Detector*> Workspace::detectors()
{
    std::vector<const Detector*> out;
    for (const auto& k : config_.detector_kinds) out.push_back(&detector(k));
    return out;
}

const ConditionalGenerator& Workspace::variant(const VariantSpec& v)
{
    const std::string id = v.id();
    if (auto it = variants_.find(id); it != variants_.end()) return it->second;
    const ConditionalGenerator& base = generator();
    const std::string artifact = "variant-" + id;
    const std::string digest = config_.variant_digest(v);
    const std::string kind = v.kind == VariantKind::Lora ? "adapter" : "generator";
    const std::uint64_t seed = derive_seed(config_.seed, artifact);
    ConditionalGenerator g;
    if (auto c = cached(artifact, kind, digest, "generalize")) {
        if (v.kind == VariantKind::Lora) {
            const LowRankAdapter a = adapter_from_checkpoint(*c);
            variant_params_[id] = a.parameter_count();
            g = apply_lora(base, a, config_.lora_alpha);
        } else {
            g = generator_from_checkpoint(*c);
            variant_params_[id] = g.params.total_size();
        }
    } else {
        log("customizing variant " + id);
        const auto pairs = make_pairs(shift_distribution(config_.world, v.shift), config_.customize_pairs,
                                      derive_seed(config_.seed, "variant-pairs-" + v.shift));
        if (v.kind == VariantKind::Lora) {
            const LowRankAdapter a = customize_lora(base, pairs, config_.lora_rank, config_.customize, seed);
            store(artifact, to_checkpoint(a, seed, digest));
            variant_params_[id] = a.parameter_count();
            g = apply_lora(base, a, config_.lora_alpha);
        } else {
            g = customize_full(base, pairs, config_.customize, seed);
            Checkpoint c = to_checkpoint(g, digest);
            c.seed = seed;
            store(artifact, c);
            g.seed = seed;
            variant_params_[id] = g.params.total_size();
        }
    }
    return variants_.emplace(id, std::move(g)).first->second;
}

std::size_t Workspace::variant_trainable_params(const VariantSpec& v)
{
    variant(v);
    return variant_params_.at(v.id());
}

const std::vector<LabeledImage>& Workspace::variant_fakes(const VariantSpec& v)
{
    const std::string id = v.id();
    if (auto it = variant_fakes_.find(id); it != variant_fakes_.end()) return it->second;
    const ConditionalGenerator& g = variant(v);
    std::vector<Condition> conds;
    std::vector<std::uint64_t> latents;
    for (const auto& im : test_fakes()) {
        conds.push_back(im.condition);
        latents.push_back(im.seed);
    }
    return variant_fakes_.emplace(id, generate_many(g, conds, latents, Provenance::FakeCustom, id)).first->second;
}

const SurrogateClassifier& Workspace::surrogate()
{
    if (surrogate_) return *surrogate_;
    EncoderPtr enc = encoder(EncoderTier::Small);
    const std::string digest = config_.attack_digest();
    if (auto c = cached("surrogate", "surrogate", digest, "attack")) {
        surrogate_ = surrogate_from_checkpoint(*c, enc);
        surrogate_test_ = prf_from_text(c->meta("test_scores"));
        return *surrogate_;
    }
    const ConditionalGenerator& g = generator();
    const std::size_t n = config_.surrogate_per_class;
    log(fmt::format("training surrogate ({} per class)", n));
    const auto reals = sample_real_set(config_.world, n, derive_seed(config_.seed, "attacker-reals"));
    std::vector<Condition> conds;
    std::vector<std::uint64_t> latents;
    const std::uint64_t fake_seed = derive_seed(config_.seed, "attacker-fakes");
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t s = derive_seed(fake_seed, i);
        conds.push_back(sample_condition(s));
        latents.push_back(s);
    }
    const auto fakes = generate_many(g, conds, latents);
    SurrogateReport report;
    SurrogateClassifier m =
        train_surrogate(fakes, reals, enc, config_.surrogate, derive_seed(config_.seed, "surrogate"), &report);
    log(fmt::format("  surrogate held-out F1 {:.2f}", report.test.f1));
    Checkpoint ckpt = to_checkpoint(m, derive_seed(config_.seed, "surrogate"), digest);
    ckpt.metadata.emplace_back("test_scores", prf_text(report.test));
    store("surrogate", ckpt);
    surrogate_ = std::move(m);
    surrogate_test_ = report.test;
    return *surrogate_;
}

std::vector<std::uint64_t> Workspace::attack_latents() const
{
    std::vector<std::uint64_t> out;
    const std::uint64_t base = derive_seed(config_.seed, "attack-latents");
    for (std::size_t i = 0; i < config_.attack_instances; ++i) out.push_back(derive_seed(base, i));
    return out;
}

AttackSet Workspace::craft(const SurrogateClassifier& m, std::span<const std::uint64_t> latents, std::uint64_t seed,
                           const std::string& artifact, const std::string& digest, const std::string& producer)
{
    if (auto c = cached(artifact, "attackset", digest, producer)) return attack_set_from(*c);
    const ConditionalGenerator& g = generator();
    const FrozenEncoder& features = *encoder(EncoderTier::Small);
    log(fmt::format("crafting {} adversarial instances ({})", latents.size(), artifact));
    const auto t0 = std::chrono::steady_clock::now();
    const std::string surrogate_before = m.checksum();
    const std::string encoder_before = features.checksum();
    const std::string generator_before = g.params.digest();
    AttackConfig ac = config_.attack;
    ac.keep_weights = true;
    AttackSet set;
    set.instances = craft_adversarial_set(g, m, features, prompt_pool(), latents, ac, seed);
    for (auto& a : set.instances) {
        const ConditionalGenerator adv{g.arch, a.theta_adv, g.seed};
        const Tensor images[] = {a.source};
        const Tensor conds = stack_conditions(std::span<const Condition>(&a.condition, 1));
        const Tensor recomputed = quantize_8bit(unstack_images(run_generator(adv, stack_images(images), conds)).front());
        if (!recomputed.same_bytes(a.x_adv)) ++set.no_noise_violations;
        a.theta_adv = ParamSet();
    }
    if (m.checksum() != surrogate_before) ++set.frozen_violations;
    if (features.checksum() != encoder_before) ++set.frozen_violations;
    if (g.params.digest() != generator_before) ++set.frozen_violations;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log(fmt::format("  done in {:.1f}s", secs));
    store(artifact, attack_set_checkpoint(set, g.arch.image_size, seed, digest));
    return set;
}

const AttackSet& Workspace::attack_set()
{
    if (attack_set_) return *attack_set_;
    const SurrogateClassifier& m = surrogate();
    const std::string digest = config_.attack_digest();
    attack_set_ = craft(m, attack_latents(), derive_seed(config_.seed, "attack"), "attack-set", digest, "attack");
    return *attack_set_;
}

const Prf& Workspace::surrogate_test()
{
    surrogate();
    return surrogate_test_;
}

const DatasetSplit& Workspace::harden_split()
{
    if (harden_split_) return *harden_split_;
    const SurrogateClassifier& m = surrogate();
    const std::size_t n = config_.harden_instances;
    std::vector<std::uint64_t> latents;
    const std::uint64_t base = derive_seed(config_.seed, "harden-latents");
    for (std::size_t i = 0; i < n; ++i) latents.push_back(derive_seed(base, i));
    const AttackSet adv = craft(m, latents, derive_seed(config_.seed, "harden-attack"), "harden-set",
                                config_.harden_digest(), "harden");
    const auto fakes = adversarial_images(adv.instances);
    const auto reals = sample_real_set(config_.world, n, derive_seed(config_.seed, "harden-reals"));
    const std::size_t n_val = std::max<std::size_t>(1, n / 5);
    DatasetSplit s;
    for (std::size_t i = 0; i < n; ++i) {
        DatasetSlice& slice = i < n - n_val ? s.train : s.val;
        slice.images.push_back(reals[i]);
        slice.images.push_back(fakes[i]);
    }
    harden_split_ = std::move(s);
    return *harden_split_;
}

const Detector& Workspace::hardened_detector(const std::string& kind)
{
    const Detector& base = detector(kind);
    const std::string id = base.id();
    if (auto it = hardened_.find(id); it != hardened_.end()) return it->second;
    const std::string artifact = "hardened-" + id;
    const std::string digest = config_.harden_digest();
    Detector d;
    if (auto c = cached(artifact, "detector", digest, "harden")) {
        d = detector_from_checkpoint(*c, base.encoder);
    } else {
        const DatasetSplit& data = harden_split();
        DetectorTrainConfig tc = detector_config(config_, base.spec.kind);
        tc.epochs = config_.harden_epochs;
        tc.optimizer.learning_rate *= config_.harden_lr_scale;
        log("adversarially fine-tuning " + id);
        d = adversarial_finetune(base, data.train, data.val, tc, derive_seed(config_.seed, artifact));
        store(artifact, to_checkpoint(d, derive_seed(config_.seed, artifact), digest));
    }
    return hardened_.emplace(id, std::move(d)).first->second;
}

const SurrogateClassifier& Workspace::adaptive_surrogate()
{
    if (adaptive_surrogate_) return *adaptive_surrogate_;
    EncoderPtr enc = encoder(EncoderTier::Small);
    const std::string digest = config_.harden_digest();
    if (auto c = cached("surrogate-adaptive", "surrogate", digest, "harden")) {
        adaptive_surrogate_ = surrogate_from_checkpoint(*c, enc);
        return *adaptive_surrogate_;
    }
    const DatasetSplit& data = harden_split();
    std::vector<LabeledImage> fakes, reals;
    for (const auto* slice : {&data.train, &data.val})
        for (const auto& im : slice->images) (im.is_fake() ? fakes : reals).push_back(im);
    log("retraining surrogate on adversarial fakes");
    SurrogateClassifier m = retrain_surrogate(surrogate(), fakes, reals, config_.surrogate,
                                              derive_seed(config_.seed, "surrogate-adaptive"));
    store("surrogate-adaptive", to_checkpoint(m, derive_seed(config_.seed, "surrogate-adaptive"), digest));
    adaptive_surrogate_ = std::move(m);
    return *adaptive_surrogate_;
}

const AttackSet& Workspace::adaptive_attack_set()
{
    if (adaptive_attack_set_) return *adaptive_attack_set_;
    const SurrogateClassifier& m = adaptive_surrogate();
    adaptive_attack_set_ = craft(m, attack_latents(), derive_seed(config_.seed, "attack"), "attack-set-adaptive",
                                 config_.harden_digest(), "harden");
    return *adaptive_attack_set_;
}

BaselineResults compute_baseline(Workspace& ws)
{
    BaselineResults r;
    const GeneratorTrainReport& gr = ws.generator_report();
    r.generator_train_mse = gr.train_mse;
    r.generator_val_mse = gr.val_mse;
    for (const Detector* d : ws.detectors()) r.detectors.push_back({d->id(), evaluate(*d, ws.split().test.images)});
    const FrozenEncoder& enc = *ws.encoder(EncoderTier::Small);
    r.kid_real_fake = kid(embedding_features(enc, ws.test_reals()), embedding_features(enc, ws.test_fakes()),
                          ws.config().kid, derive_seed(ws.config().seed, "kid"));
    r.semantic_real = mean_semantic_score(enc, ws.test_reals());
    r.semantic_fake = mean_semantic_score(enc, ws.test_fakes());
    r.spectra = spectra_of({{"real", pixels_of(ws.test_reals())}, {"fake", pixels_of(ws.test_fakes())}});
    return r;
}

GeneralizeResults compute_generalize(Workspace& ws)
{
    const ExperimentConfig& c = ws.config();
    if (c.variants.empty()) throw PipelineError("generalize: variants.list is empty");
    GeneralizeResults r;
    const FrozenEncoder& enc = *ws.encoder(EncoderTier::Small);
    const auto& base_fakes = ws.test_fakes();
    const double base_semantic = mean_semantic_score(enc, base_fakes);
    const FeatureSet base_features = embedding_features(enc, base_fakes);
    const auto detectors = ws.detectors();
    std::map<std::string, std::vector<double>> per_detector;
    for (const VariantSpec& v : c.variants) {
        const auto& fakes = ws.variant_fakes(v);
        VariantRecord rec;
        rec.spec = v;
        rec.trainable_params = ws.variant_trainable_params(v);
        const auto shifted = sample_real_set(shift_distribution(c.world, v.shift), base_fakes.size(),
                                             derive_seed(c.seed, "shifted-reals-" + v.shift));
        const FeatureSet shifted_features = embedding_features(enc, shifted);
        const std::uint64_t kid_seed = derive_seed(c.seed, "kid-" + v.id());
        rec.kid_custom = kid(shifted_features, embedding_features(enc, fakes), c.kid, kid_seed).value;
        rec.kid_base = kid(shifted_features, base_features, c.kid, kid_seed).value;
        rec.semantic = mean_semantic_score(enc, fakes);
        rec.semantic_gap = std::abs(rec.semantic - base_semantic);
        rec.passes_gates = rec.semantic_gap < 0.02 && rec.kid_custom < 0.05;
        r.variants.push_back(rec);
        for (const Detector* d : detectors) {
            r.shifts.push_back(recall_shift(*d, v.id(), base_fakes, fakes));
            per_detector[d->id()].push_back(r.shifts.back().delta_r);
        }
    }
    for (const auto& [id, values] : per_detector) r.average_delta_r[id] = mean_of(values);
    return r;
}

EnhanceResults compute_enhance(Workspace& ws)
{
    const ExperimentConfig& c = ws.config();
    if (c.variants.empty()) throw PipelineError("enhance: variants.list is empty");
    EnhanceResults r;
    const Detector& dct = ws.detector("dct-lr");
    const Detector& residual = ws.detector("residual-dct-lr");
    const auto& base_fakes = ws.test_fakes();
    for (const VariantSpec& v : c.variants) {
        const auto& fakes = ws.variant_fakes(v);
        r.dct.push_back(recall_shift(dct, v.id(), base_fakes, fakes));
        r.residual.push_back(recall_shift(residual, v.id(), base_fakes, fakes));
        if (r.residual.back().delta_r < r.dct.back().delta_r) ++r.reduced;
    }

    std::vector<const Detector*> members;
    for (const auto& k : c.ensemble) {
        members.push_back(&ws.detector(k));
        r.members.push_back(members.back()->id());
    }
    std::vector<std::pair<std::string, std::vector<LabeledImage>>> sets;
    sets.emplace_back("base-test", ws.split().test.images);
    for (const VariantSpec& v : c.variants) sets.emplace_back(v.id(), with_reals(ws.test_reals(), ws.variant_fakes(v)));
    std::vector<double> dct_f1, ens_f1;
    for (const auto& [name, images] : sets) {
        EnsembleRow row;
        row.set = name;
        std::vector<bool> truth;
        for (const auto& im : images) truth.push_back(im.is_fake());
        const std::vector<bool> ens = ensemble_predict_batch(members, images);
        for (const Detector* d : members) {
            std::vector<bool> labels;
            for (const auto& p : predict_batch(*d, std::span<const LabeledImage>(images))) labels.push_back(p.fake);
            for (std::size_t i = 0; i < labels.size(); ++i)
                if (labels[i] && !ens[i]) ++row.violations;
            row.member_f1.push_back(score_labels(truth, labels).f1);
        }
        row.ensemble_f1 = score_labels(truth, ens).f1;
        r.violations += row.violations;
        if (name != "base-test") {
            dct_f1.push_back(evaluate(dct, images).f1);
            ens_f1.push_back(row.ensemble_f1);
        }
        r.ensemble.push_back(std::move(row));
    }
    r.dct_f1_custom = mean_of(dct_f1);
    r.ensemble_f1_custom = mean_of(ens_f1);
    return r;
}

AttackResults compute_attack(Workspace& ws)
{
    const ExperimentConfig& c = ws.config();
    AttackResults r;
    const AttackSet& set = ws.attack_set();
    r.surrogate_test = ws.surrogate_test();
    r.frozen_violations = set.frozen_violations;
    r.no_noise_violations = set.no_noise_violations;
    const auto clean = clean_images(set.instances);
    const auto adv = adversarial_images(set.instances);
    for (const Detector* d : ws.detectors()) {
        r.shifts.push_back(recall_shift(*d, "adversarial", clean, adv));
        for (const auto& p : predict_batch(*d, std::span<const LabeledImage>(clean))) r.labels_clean[d->id()].push_back(p.fake);
        for (const auto& p : predict_batch(*d, std::span<const LabeledImage>(adv))) r.labels_adv[d->id()].push_back(p.fake);
    }
    const FrozenEncoder& enc = *ws.encoder(EncoderTier::Small);
    r.semantic_clean = mean_semantic_score(enc, clean);
    r.semantic_adv = mean_semantic_score(enc, adv);
    r.kid_fake = kid(embedding_features(enc, adv), embedding_features(enc, clean), c.kid, derive_seed(c.seed, "kid-fake"));
    r.kid_baseline = kid(embedding_features(enc, ws.test_reals()), embedding_features(enc, ws.test_fakes()), c.kid,
                         derive_seed(c.seed, "kid"));
    r.spectra = spectra_of(
        {{"real", pixels_of(ws.test_reals())}, {"fake", pixels_of(clean)}, {"adversarial", pixels_of(adv)}});
    std::size_t gained = 0, monotone = 0, steps = 0;
    for (const auto& a : set.instances) {
        if (a.p_after[0] > a.p_before[0]) ++gained;
        for (std::size_t k = 1; k < a.trace.size(); ++k, ++steps)
            if (a.trace[k] <= a.trace[k - 1]) ++monotone;
    }
    r.surrogate_gain = 100.0 * static_cast<double>(gained) / static_cast<double>(set.instances.size());
    r.trace_monotone = steps ? 100.0 * static_cast<double>(monotone) / static_cast<double>(steps) : 100.0;
    return r;
}

HardenResults compute_harden(Workspace& ws)
{
    HardenResults r;
    const AttackSet& before = ws.attack_set();
    const AttackSet& after = ws.adaptive_attack_set();
    const auto clean_before = clean_images(before.instances);
    const auto adv_before = adversarial_images(before.instances);
    const auto clean_after = clean_images(after.instances);
    const auto adv_after = adversarial_images(after.instances);
    const DatasetSplit& hs = ws.harden_split();
    for (const Detector* d : ws.detectors()) {
        const Detector& h = ws.hardened_detector(d->id());
        HardenRow row;
        row.detector = d->id();
        row.delta_r_before = recall_shift(*d, "adversarial", clean_before, adv_before).delta_r;
        row.delta_r_after = recall_shift(h, "adaptive", clean_after, adv_after).delta_r;
        row.f1_before = evaluate(*d, ws.split().test.images).f1;
        row.f1_after = evaluate(h, ws.split().test.images).f1;
        row.adv_val_f1 = evaluate(h, hs.val.images).f1;
        r.rows.push_back(row);
    }
    std::vector<LabeledImage> val_fakes, val_reals;
    for (const auto& im : hs.val.images) (im.is_fake() ? val_fakes : val_reals).push_back(im);
    const SurrogateClassifier& m = ws.adaptive_surrogate();
    std::vector<bool> truth, predicted;
    const auto probs_f = surrogate_probabilities(m, pixels_of(val_fakes));
    const auto probs_r = surrogate_probabilities(m, pixels_of(val_reals));
    for (const auto& p : probs_f) {
        truth.push_back(true);
        predicted.push_back(p[1] >= 0.5);
    }
    for (const auto& p : probs_r) {
        truth.push_back(false);
        predicted.push_back(p[1] >= 0.5);
    }
    r.adaptive_surrogate_test = score_labels(truth, predicted);
    return r;
}

namespace {

// Provenance columns appended to every report row.
class Stamp {
public:
    explicit Stamp(Workspace& ws) : ws_(ws), config_(ws.config().digest()) {}

    std::vector<std::string> header(std::vector<std::string> columns) const
    {
        columns.push_back("config_digest");
        columns.push_back("checkpoints");
        return columns;
    }
    std::vector<CsvTable::Cell> row(std::vector<CsvTable::Cell> cells, const std::vector<std::string>& artifacts)
    {
        std::string ckpts;
        for (const auto& a : artifacts) {
            ckpts += (ckpts.empty() ? "" : ";") + a + "=" + ws_.checkpoint_digest(a).substr(0, kShortDigest);
        }
        cells.push_back(config_);
        cells.push_back(ckpts);
        return cells;
    }

private:
    Workspace& ws_;
    std::string config_;
};

std::vector<std::string> encoder_artifacts(const Detector& d)
{
    std::vector<std::string> out{"generator", "detector-" + d.id()};
    if (d.encoder) out.push_back("encoder-" + d.encoder->id());
    return out;
}

std::string variant_artifact(const std::string& id)
{
    return "variant-" + id;
}

void emit_spectra(Workspace& ws, const std::vector<SpectrumEntry>& spectra, const std::vector<std::string>& artifacts,
                  ReportWriter& out)
{
    Stamp stamp(ws);
    CsvTable t(stamp.header({"spectrum", "harmonic_peak", "distance_to_real"}));
    for (const auto& e : spectra) {
        out.write_spectrum("spectra/" + e.name + ".pgm", e.spectrum);
        t.add_row(stamp.row({e.name, e.harmonic_peak, e.distance_to_real}, artifacts));
    }
    out.write_csv("spectra.csv", t);
}

CsvTable::Cell flag(bool b)
{
    return static_cast<std::int64_t>(b ? 1 : 0);
}

}  // namespace

void emit_baseline(Workspace& ws, const BaselineResults& r, ReportWriter& out)
{
    Stamp stamp(ws);
    const ExperimentConfig& c = ws.config();
    CsvTable gen(stamp.header({"train_mse", "val_mse", "val_threshold", "below_threshold"}));
    gen.add_row(stamp.row({r.generator_train_mse, r.generator_val_mse, c.generator_train.val_threshold,
                           flag(r.generator_val_mse < c.generator_train.val_threshold)},
                          {"generator"}));
    out.write_csv("generator.csv", gen);

    CsvTable det(stamp.header({"detector", "dataset", "precision", "recall", "f1", "n"}));
    for (const auto& d : r.detectors) {
        det.add_row(stamp.row({d.detector, "base-test", d.test.precision, d.test.recall, d.test.f1, count_cell(d.test.n)},
                              encoder_artifacts(ws.detector(d.detector))));
    }
    out.write_csv("detectors.csv", det);

    CsvTable q(stamp.header({"kid_real_fake", "kid_std_error", "kid_subset_size", "kid_num_subsets", "semantic_real",
                             "semantic_fake"}));
    q.add_row(stamp.row({r.kid_real_fake.value, r.kid_real_fake.std_error, count_cell(r.kid_real_fake.subset_size),
                         count_cell(r.kid_real_fake.num_subsets), r.semantic_real, r.semantic_fake},
                        {"generator", "encoder-small"}));
    out.write_csv("quality.csv", q);
    emit_spectra(ws, r.spectra, {"generator"}, out);
}

void emit_generalize(Workspace& ws, const GeneralizeResults& r, ReportWriter& out)
{
    Stamp stamp(ws);
    const ExperimentConfig& c = ws.config();
    const double base_params = static_cast<double>(ws.generator().params.total_size());
    CsvTable reg(stamp.header({"variant", "kind", "shift", "rank", "alpha", "trainable_params", "param_share",
                               "kid_custom", "kid_base", "semantic", "semantic_gap", "passes_gates"}));
    for (const auto& v : r.variants) {
        const bool lora = v.spec.kind == VariantKind::Lora;
        reg.add_row(stamp.row({v.spec.id(), lora ? "lora" : "fm", v.spec.shift,
                               lora ? count_cell(c.lora_rank) : CsvTable::Cell{std::string()},
                               lora ? CsvTable::Cell{c.lora_alpha} : CsvTable::Cell{std::string()},
                               count_cell(v.trainable_params), 100.0 * static_cast<double>(v.trainable_params) / base_params,
                               v.kid_custom, v.kid_base, v.semantic, v.semantic_gap, flag(v.passes_gates)},
                              {"generator", "encoder-small", variant_artifact(v.spec.id())}));
    }
    out.write_csv("variants.csv", reg);

    CsvTable dr(stamp.header({"detector", "variant", "r1", "r2", "delta_r"}));
    std::map<std::string, std::pair<double, double>> sums;
    for (const auto& s : r.shifts) {
        const Detector& d = ws.detector(s.detector);
        auto artifacts = encoder_artifacts(d);
        artifacts.push_back(variant_artifact(s.set));
        dr.add_row(stamp.row({s.detector, s.set, s.r1, s.r2, s.delta_r}, artifacts));
        sums[s.detector].first += s.r1;
        sums[s.detector].second += s.r2;
    }
    const double n = static_cast<double>(r.variants.size());
    for (const auto& id : c.detector_kinds) {
        const Detector& d = ws.detector(id);
        dr.add_row(stamp.row({d.id(), "average", sums[d.id()].first / n, sums[d.id()].second / n,
                              r.average_delta_r.at(d.id())},
                             encoder_artifacts(d)));
    }
    out.write_csv("delta_recall.csv", dr);
}

void emit_enhance(Workspace& ws, const EnhanceResults& r, ReportWriter& out)
{
    Stamp stamp(ws);
    CsvTable res(stamp.header({"variant", "dct_r2", "residual_r2", "dct_delta_r", "residual_delta_r", "reduced"}));
    for (std::size_t i = 0; i < r.dct.size(); ++i) {
        res.add_row(stamp.row({r.dct[i].set, r.dct[i].r2, r.residual[i].r2, r.dct[i].delta_r, r.residual[i].delta_r,
                               flag(r.residual[i].delta_r < r.dct[i].delta_r)},
                              {"detector-dct-lr", "detector-residual-dct-lr", variant_artifact(r.dct[i].set)}));
    }
    out.write_csv("residual.csv", res);

    std::vector<std::string> cols{"set"};
    std::vector<std::string> artifacts{"generator"};
    for (const auto& m : r.members) {
        cols.push_back(m + "_f1");
        for (const auto& a : encoder_artifacts(ws.detector(m)))
            if (std::find(artifacts.begin(), artifacts.end(), a) == artifacts.end()) artifacts.push_back(a);
    }
    cols.push_back("ensemble_f1");
    cols.push_back("violations");
    CsvTable ens(stamp.header(cols));
    for (const auto& row : r.ensemble) {
        std::vector<CsvTable::Cell> cells{row.set};
        for (double f : row.member_f1) cells.push_back(f);
        cells.push_back(row.ensemble_f1);
        cells.push_back(count_cell(row.violations));
        auto a = artifacts;
        if (row.set != "base-test") a.push_back(variant_artifact(row.set));
        ens.add_row(stamp.row(std::move(cells), a));
    }
    out.write_csv("ensemble.csv", ens);

    CsvTable sum(stamp.header({"variants", "residual_reduces", "dct_f1_custom", "ensemble_f1_custom", "violations"}));
    sum.add_row(stamp.row({count_cell(r.dct.size()), count_cell(r.reduced), r.dct_f1_custom, r.ensemble_f1_custom,
                           count_cell(r.violations)},
                          artifacts));
    out.write_csv("enhance_summary.csv", sum);
}

void emit_attack(Workspace& ws, const AttackResults& r, ReportWriter& out)
{
    Stamp stamp(ws);
    const AttackSet& set = ws.attack_set();
    const std::vector<std::string> attack_artifacts{"generator", "encoder-small", "surrogate", "attack-set"};

    CsvTable det(stamp.header({"detector", "r1", "r2", "delta_r"}));
    for (const auto& s : r.shifts) {
        auto a = encoder_artifacts(ws.detector(s.detector));
        a.push_back("attack-set");
        det.add_row(stamp.row({s.detector, s.r1, s.r2, s.delta_r}, a));
    }
    out.write_csv("attack_detectors.csv", det);

    std::vector<std::string> cols{"id", "latent_seed", "prompt"};
    for (const auto& n : attribute_names()) cols.push_back(n);
    for (const auto& c : std::vector<std::string>{"p_real_before", "p_real_after", "semantic_clean", "semantic_adv",
                                                  "loss_first", "loss_last"})
        cols.push_back(c);
    std::vector<std::string> ids;
    for (const auto& s : r.shifts) {
        ids.push_back(s.detector);
        cols.push_back(s.detector + "_clean");
        cols.push_back(s.detector + "_adv");
    }
    CsvTable inst(stamp.header(cols));
    const FrozenEncoder& enc = *ws.encoder(EncoderTier::Small);
    const auto clean = clean_images(set.instances);
    const auto adv = adversarial_images(set.instances);
    const auto sem_clean = semantic_scores(enc, clean);
    const auto sem_adv = semantic_scores(enc, adv);
    for (std::size_t i = 0; i < set.instances.size(); ++i) {
        const AttackInstance& a = set.instances[i];
        std::vector<CsvTable::Cell> cells{count_cell(a.id), std::to_string(a.latent_seed),
                                          prompt_pool()[a.prompt_index].first};
        for (double v : a.condition) cells.push_back(v);
        cells.push_back(a.p_before[0]);
        cells.push_back(a.p_after[0]);
        cells.push_back(sem_clean[i]);
        cells.push_back(sem_adv[i]);
        cells.push_back(a.trace.empty() ? 0.0 : a.trace.front());
        cells.push_back(a.trace.empty() ? 0.0 : a.trace.back());
        for (const auto& id : ids) {
            cells.push_back(flag(r.labels_clean.at(id)[i]));
            cells.push_back(flag(r.labels_adv.at(id)[i]));
        }
        inst.add_row(stamp.row(std::move(cells), attack_artifacts));
        out.write_image(fmt::format("images/adv_{:04d}.pgm", i), a.x_adv);
    }
    out.write_csv("attack_instances.csv", inst);

    const double fake_dist = r.spectra.at(1).distance_to_real;
    const double adv_dist = r.spectra.at(2).distance_to_real;
    CsvTable sum(stamp.header({"instances", "surrogate_f1", "surrogate_gain", "trace_monotone", "semantic_clean",
                               "semantic_adv", "semantic_gap", "kid_fake", "kid_baseline", "kid_ratio",
                               "spectral_distance_fake", "spectral_distance_adv", "frozen_violations",
                               "no_noise_violations"}));
    sum.add_row(stamp.row({count_cell(set.instances.size()), r.surrogate_test.f1, r.surrogate_gain, r.trace_monotone,
                           r.semantic_clean, r.semantic_adv, std::abs(r.semantic_adv - r.semantic_clean),
                           r.kid_fake.value, r.kid_baseline.value,
                           r.kid_baseline.value > 0.0 ? r.kid_fake.value / r.kid_baseline.value : 0.0, fake_dist,
                           adv_dist, count_cell(r.frozen_violations), count_cell(r.no_noise_violations)},
                          attack_artifacts));
    out.write_csv("attack_summary.csv", sum);
    emit_spectra(ws, r.spectra, attack_artifacts, out);
}

void emit_harden(Workspace& ws, const HardenResults& r, ReportWriter& out)
{
    Stamp stamp(ws);
    CsvTable t(stamp.header({"detector", "delta_r_before", "delta_r_after", "delta_r_ratio", "f1_before", "f1_after",
                             "f1_drop", "adv_val_f1"}));
    for (const auto& row : r.rows) {
        auto a = encoder_artifacts(ws.detector(row.detector));
        for (const auto& extra : {"hardened-" + row.detector, std::string("attack-set"), std::string("harden-set"),
                                  std::string("attack-set-adaptive")})
            a.push_back(extra);
        const CsvTable::Cell ratio = row.delta_r_before > 0.0 ? CsvTable::Cell{row.delta_r_after / row.delta_r_before}
                                                              : CsvTable::Cell{std::string()};
        t.add_row(stamp.row({row.detector, row.delta_r_before, row.delta_r_after, ratio, row.f1_before, row.f1_after,
                             row.f1_before - row.f1_after, row.adv_val_f1},
                            a));
    }
    out.write_csv("harden.csv", t);
    CsvTable s(stamp.header({"adaptive_surrogate_precision", "adaptive_surrogate_recall", "adaptive_surrogate_f1"}));
    s.add_row(stamp.row({r.adaptive_surrogate_test.precision, r.adaptive_surrogate_test.recall,
                         r.adaptive_surrogate_test.f1},
                        {"surrogate", "surrogate-adaptive"}));
    out.write_csv("harden_summary.csv", s);
}

std::vector<ManifestEntry> run_pipeline(const std::string& name, Workspace& ws)
{
    const auto& names = pipeline_names();
    if (std::find(names.begin(), names.end(), name) == names.end()) {
        std::string valid;
        for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
        throw PipelineError("unknown pipeline '" + name + "' (valid: " + valid + ")");
    }
    ws.allow(name);
    ws.log("pipeline " + name);
    ReportWriter out((fs::path(ws.config().out_dir) / "reports" / name).string());
    out.write_text("config.ini", ws.config().canonical_text());
    if (name == "baseline") {
        emit_baseline(ws, compute_baseline(ws), out);
    } else if (name == "generalize") {
        emit_generalize(ws, compute_generalize(ws), out);
    } else if (name == "enhance") {
        emit_enhance(ws, compute_enhance(ws), out);
    } else if (name == "attack") {
        emit_attack(ws, compute_attack(ws), out);
    } else {
        emit_harden(ws, compute_harden(ws), out);
    }
    return out.finish();
}

void export_dataset(Workspace& ws)
{
    const std::string dir = (fs::path(ws.config().out_dir) / "data").string();
    write_manifest(ws.split(), dir);
    ws.log("wrote dataset to " + dir);
}

}  // namespace dfb
