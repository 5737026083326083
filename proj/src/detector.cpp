#include "dfb/detector.hpp"

#include "dfb/batch.hpp"
#include "dfb/ops.hpp"
#include "dfb/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace dfb {

namespace {

constexpr std::size_t kCnnWidths[3] = {8, 16, 16};

bool uses_linear_head(DetectorKind k)
{
    return k != DetectorKind::Cnn;
}

// Rows of a [N, ...] tensor selected by idx.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx)
{
    Shape s = t.shape();
    const std::size_t row = t.numel() / s[0];
    s[0] = idx.size();
    Tensor out(s);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    return out;
}

std::size_t feature_dim(const Detector& d)
{
    switch (d.spec.kind) {
    case DetectorKind::DctLr: return d.image_size * d.image_size;
    case DetectorKind::ResidualDctLr: return 2 * d.image_size * d.image_size;
    case DetectorKind::Embedding: return d.encoder->arch.embedding_dim();
    case DetectorKind::Cnn: break;
    }
    return 0;
}

void check_image(const Detector& d, const Tensor& image)
{
    if (image.shape() != Shape{d.image_size, d.image_size}) {
        throw ShapeError(fmt::format("detector {}: expected [{},{}] image, got {}", d.id(), d.image_size, d.image_size,
                                     shape_str(image.shape())));
    }
}

// Model input for a batch of images: raw features for the linear kinds,
// centred pixels [N,1,S,S] for the CNN.
Tensor model_inputs(const Detector& d, std::span<const Tensor> images)
{
    for (const Tensor& im : images) check_image(d, im);
    const std::size_t n = images.size();
    switch (d.spec.kind) {
    case DetectorKind::DctLr:
    case DetectorKind::ResidualDctLr: {
        const std::size_t f = feature_dim(d);
        Tensor out({n, f});
#pragma omp parallel for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> v = log_dct_features(images[i], d.dct);
            if (d.spec.kind == DetectorKind::ResidualDctLr) {
                const std::vector<double> r = residual_features(images[i], d.dct);
                v.insert(v.end(), r.begin(), r.end());
            }
            std::copy(v.begin(), v.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * f));
        }
        return out;
    }
    case DetectorKind::Embedding: {
        const FeatureSet fs = embedding_features(*d.encoder, images);
        return Tensor({n, fs.dim}, fs.values);
    }
    case DetectorKind::Cnn: {
        Tensor out = stack_images(images);
        for (double& v : out.data()) v -= 0.5;
        return out;
    }
    }
    throw std::logic_error("unhandled detector kind");
}

Tensor model_inputs(const Detector& d, std::span<const LabeledImage> images)
{
    std::vector<Tensor> px;
    px.reserve(images.size());
    for (const auto& im : images) px.push_back(im.pixels);
    return model_inputs(d, px);
}

// [N,1] logits.
Var logits(const Detector& d, Bindings& w, const Var& x)
{
    using namespace ops;
    if (uses_linear_head(d.spec.kind)) {
        Var z = standardize(x, d.params.at("feat_mean"), d.params.at("feat_std"));
        return linear(z, w.at("head.w"), w.at("head.b"));
    }
    Var h = x;
    for (int b = 0; b < 3; ++b) {
        const std::string name = "conv" + std::to_string(b + 1);
        h = relu(add_channel_bias(conv2d(h, w.at(name + ".w"), 2, 1), w.at(name + ".b")));
    }
    return linear(global_avg_pool(h), w.at("head.w"), w.at("head.b"));
}

// Trainable subset: standardization statistics stay fixed.
std::vector<Tensor*> trainable(Detector& d)
{
    std::vector<Tensor*> ptrs;
    for (auto& e : d.params.entries()) {
        if (e.name == "feat_mean" || e.name == "feat_std") continue;
        e.tensor.set_requires_grad(true);
        ptrs.push_back(&e.tensor);
    }
    return ptrs;
}

void train_loop(Detector& d, const Tensor& inputs, const std::vector<double>& targets,
                const DetectorTrainConfig& config, std::uint64_t seed)
{
    if (config.epochs == 0) return;
    if (config.batch_size == 0) throw std::invalid_argument("detector training: batch size must be positive");
    config.optimizer.validate();
    Optimizer opt(config.optimizer, trainable(d));

    std::vector<std::size_t> order(targets.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "detector-batches"));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (auto [b, e] : batch_ranges(order.size(), config.batch_size)) {
            const std::span<const std::size_t> idx(order.data() + b, e - b);
            std::vector<double> t;
            for (std::size_t i : idx) t.push_back(targets[i]);
            opt.zero_grad();
            Graph g;
            Bindings w;
            for (auto& entry : d.params.entries()) {
                if (entry.tensor.requires_grad()) w.emplace(entry.name, g.parameter(entry.tensor));
            }
            Var loss = ops::bce_with_logits(logits(d, w, g.constant(gather_rows(inputs, idx))), t);
            g.backward(loss);
            opt.step();
        }
    }
    for (auto& e : d.params.entries()) e.tensor.set_requires_grad(false);
}

std::vector<double> fake_targets(std::span<const LabeledImage> images)
{
    std::vector<double> t;
    t.reserve(images.size());
    for (const auto& im : images) t.push_back(im.is_fake() ? 1.0 : 0.0);
    return t;
}

void summarize(const Detector& d, const DatasetSlice& val, DetectorTrainSummary* summary)
{
    if (!summary) return;
    *summary = {};
    if (val.images.empty()) return;
    summary->validation = evaluate(d, val.images);
    if (summary->validation.f1 < 60.0) {
        summary->warning = fmt::format("detector {} did not converge: validation F1 {:.2f} < 60", d.id(),
                                       summary->validation.f1);
    }
}

std::vector<Prediction> predict_inputs(const Detector& d, const Tensor& inputs)
{
    Graph g;
    Bindings w;
    for (const auto& e : d.params.entries()) w.emplace(e.name, g.constant(e.tensor.detached()));
    const Tensor z = logits(d, w, g.constant(inputs)).value().detached();
    std::vector<Prediction> out(z.numel());
    for (std::size_t i = 0; i < z.numel(); ++i) {
        out[i].score = 1.0 / (1.0 + std::exp(-z[i]));
        out[i].fake = out[i].score >= d.threshold;
    }
    return out;
}

}  // namespace

std::string DetectorSpec::id() const
{
    switch (kind) {
    case DetectorKind::DctLr: return "dct-lr";
    case DetectorKind::ResidualDctLr: return "residual-dct-lr";
    case DetectorKind::Cnn: return "cnn";
    case DetectorKind::Embedding: return "embedding-" + encoder_id;
    }
    return "?";
}

DetectorSpec DetectorSpec::parse(const std::string& text)
{
    if (text == "dct-lr") return {DetectorKind::DctLr, ""};
    if (text == "residual-dct-lr") return {DetectorKind::ResidualDctLr, ""};
    if (text == "cnn") return {DetectorKind::Cnn, ""};
    std::string tier;
    if (text.rfind("embedding-", 0) == 0) {
        tier = text.substr(10);
    } else if (text.rfind("embedding(", 0) == 0 && text.back() == ')') {
        tier = text.substr(10, text.size() - 11);
    } else {
        throw std::invalid_argument("unknown detector kind '" + text
                                    + "' (expected dct-lr, residual-dct-lr, cnn, embedding-small, embedding-large)");
    }
    parse_encoder_tier(tier);
    return {DetectorKind::Embedding, tier};
}

std::string Detector::descriptor() const
{
    return fmt::format("detector:v1:kind={}:size={}", id(), image_size);
}

DetectorTrainConfig DetectorTrainConfig::for_kind(DetectorKind kind)
{
    DetectorTrainConfig c;
    switch (kind) {
    case DetectorKind::DctLr:
    case DetectorKind::ResidualDctLr:
        c.epochs = 30;
        c.optimizer.kind = OptimizerKind::SgdMomentum;
        c.optimizer.learning_rate = 1e-2;
        c.optimizer.weight_decay = 1e-3;
        break;
    case DetectorKind::Cnn:
        c.epochs = 10;
        c.batch_size = 32;
        c.optimizer.kind = OptimizerKind::Adam;
        c.optimizer.learning_rate = 2e-3;
        break;
    case DetectorKind::Embedding:
        c.epochs = 40;
        c.optimizer.kind = OptimizerKind::Adam;
        c.optimizer.learning_rate = 1e-2;
        break;
    }
    return c;
}

Detector train_detector(const DetectorSpec& spec, const DatasetSplit& split, const DetectorTrainConfig& config,
                        std::uint64_t seed, EncoderPtr encoder, DetectorTrainSummary* summary)
{
    if (split.train.images.empty()) throw std::invalid_argument("train_detector: empty training set");
    Detector d;
    d.spec = spec;
    d.image_size = split.train.images.front().pixels.dim(0);
    if (spec.kind == DetectorKind::Embedding) {
        if (!encoder) throw std::invalid_argument("train_detector: " + spec.id() + " needs an encoder");
        if (encoder->id() != spec.encoder_id) {
            throw std::invalid_argument("train_detector: encoder '" + encoder->id() + "' does not match " + spec.id());
        }
        d.encoder = std::move(encoder);
    }

    const Tensor inputs = model_inputs(d, split.train.images);
    Rng init(derive_seed(seed, "detector-init"));
    if (uses_linear_head(spec.kind)) {
        const std::size_t n = inputs.dim(0), f = inputs.dim(1);
        Tensor mean({f}), sd({f});
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < f; ++c) mean[c] += inputs[r * f + c];
        for (std::size_t c = 0; c < f; ++c) mean[c] /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < f; ++c) {
                const double dv = inputs[r * f + c] - mean[c];
                sd[c] += dv * dv;
            }
        for (std::size_t c = 0; c < f; ++c) {
            sd[c] = std::sqrt(sd[c] / static_cast<double>(n));
            if (sd[c] < 1e-8) sd[c] = 1.0;
        }
        d.params.add("feat_mean", std::move(mean));
        d.params.add("feat_std", std::move(sd));
        d.params.add("head.w", Tensor({1, f}));
        d.params.add("head.b", Tensor({1}));
    } else {
        std::size_t in = 1;
        for (int b = 0; b < 3; ++b) {
            const std::string name = "conv" + std::to_string(b + 1);
            d.params.add(name + ".w", init_weight({kCnnWidths[b], in, 4, 4}, in * 16, init));
            d.params.add(name + ".b", Tensor({kCnnWidths[b]}));
            in = kCnnWidths[b];
        }
        d.params.add("head.w", init_weight({1, in}, in, init));
        d.params.add("head.b", Tensor({1}));
    }
    train_loop(d, inputs, fake_targets(split.train.images), config, seed);
    summarize(d, split.val, summary);
    return d;
}

Detector adversarial_finetune(const Detector& detector, const DatasetSlice& train, const DatasetSlice& val,
                              const DetectorTrainConfig& config, std::uint64_t seed, DetectorTrainSummary* summary)
{
    Detector d = detector;
    d.params = detector.params.detached();
    if (config.epochs > 0) {
        if (train.images.empty()) throw std::invalid_argument("adversarial_finetune: empty training set");
        train_loop(d, model_inputs(d, train.images), fake_targets(train.images), config,
                   derive_seed(seed, "finetune"));
    }
    summarize(d, val, summary);
    return d;
}

Prediction predict(const Detector& detector, const Tensor& image)
{
    const Tensor images[] = {image};
    return predict_batch(detector, images).front();
}

std::vector<Prediction> predict_batch(const Detector& detector, std::span<const Tensor> images)
{
    std::vector<Prediction> out;
    out.reserve(images.size());
    for (auto [b, e] : batch_ranges(images.size(), 256)) {
        auto part = predict_inputs(detector, model_inputs(detector, images.subspan(b, e - b)));
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<Prediction> predict_batch(const Detector& detector, std::span<const LabeledImage> images)
{
    std::vector<Tensor> px;
    px.reserve(images.size());
    for (const auto& im : images) px.push_back(im.pixels);
    return predict_batch(detector, px);
}

Prf evaluate(const Detector& detector, std::span<const LabeledImage> images)
{
    if (images.empty()) throw std::invalid_argument("evaluate: empty set");
    const auto preds = predict_batch(detector, images);
    ConfusionCounts c;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const bool t = images[i].is_fake(), f = preds[i].fake;
        if (t && f) ++c.tp;
        else if (f) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return precision_recall_f1(c);
}

double fake_recall(const Detector& detector, std::span<const LabeledImage> fakes)
{
    if (fakes.empty()) throw std::invalid_argument("fake_recall: empty set");
    const auto preds = predict_batch(detector, fakes);
    const auto flagged = std::count_if(preds.begin(), preds.end(), [](const Prediction& p) { return p.fake; });
    return 100.0 * static_cast<double>(flagged) / static_cast<double>(fakes.size());
}

bool ensemble_predict(std::span<const Detector* const> members, const Tensor& image)
{
    std::vector<LabeledImage> one(1);
    one[0].pixels = image;
    return ensemble_predict_batch(members, one).front();
}

std::vector<bool> ensemble_predict_batch(std::span<const Detector* const> members,
                                         std::span<const LabeledImage> images)
{
    if (members.empty()) throw std::invalid_argument("ensemble_predict: no member detectors");
    if (members.size() < 2) throw std::invalid_argument("ensemble_predict: an ensemble needs at least 2 detectors");
    std::vector<bool> out(images.size(), false);
    for (const Detector* m : members) {
        const auto preds = predict_batch(*m, images);
        for (std::size_t i = 0; i < images.size(); ++i) out[i] = out[i] || preds[i].fake;
    }
    return out;
}

Prf evaluate_ensemble(std::span<const Detector* const> members, std::span<const LabeledImage> images)
{
    if (images.empty()) throw std::invalid_argument("evaluate_ensemble: empty set");
    const auto flagged = ensemble_predict_batch(members, images);
    ConfusionCounts c;
    for (std::size_t i = 0; i < images.size(); ++i) {
        const bool t = images[i].is_fake();
        if (t && flagged[i]) ++c.tp;
        else if (!t && flagged[i]) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return precision_recall_f1(c);
}

}  // namespace dfb
