#include "dfb/attack.hpp"

#include "dfb/batch.hpp"
#include "dfb/ops.hpp"
#include "dfb/pgm.hpp"
#include "dfb/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

namespace dfb {

namespace {

constexpr int kReal = 0;
constexpr int kFake = 1;

struct LabeledFeatures {
    Tensor features;  // [N, D]
    std::vector<int> labels;
};

LabeledFeatures surrogate_data(const FrozenEncoder& enc, std::span<const LabeledImage> fakes,
                               std::span<const LabeledImage> reals)
{
    const FeatureSet f = embedding_features(enc, fakes);
    const FeatureSet r = embedding_features(enc, reals);
    LabeledFeatures out;
    std::vector<double> values = f.values;
    values.insert(values.end(), r.values.begin(), r.values.end());
    out.features = Tensor({fakes.size() + reals.size(), enc.arch.embedding_dim()}, std::move(values));
    out.labels.assign(fakes.size(), kFake);
    out.labels.insert(out.labels.end(), reals.size(), kReal);
    return out;
}

Tensor rows(const Tensor& t, std::span<const std::size_t> idx)
{
    const std::size_t d = t.dim(1);
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(idx[i] * d), d,
                    out.data().begin() + static_cast<std::ptrdiff_t>(i * d));
    return out;
}

Var head_logits(ParamSet& params, Bindings& w, const Var& embedding)
{
    Var z = ops::standardize(embedding, params.at("feat_mean"), params.at("feat_std"));
    return ops::linear(z, w.at("head.w"), w.at("head.b"));
}

// Per-class holdout split, deterministic in seed.
void split_indices(const std::vector<int>& labels, double test_fraction, std::uint64_t seed,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& test)
{
    Rng rng(seed);
    for (int cls : {kReal, kFake}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] == cls) idx.push_back(i);
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
        test.insert(test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
        train.insert(train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
    }
}

Prf head_f1(const SurrogateClassifier& m, const LabeledFeatures& data, std::span<const std::size_t> idx)
{
    Graph g;
    const Tensor logits = surrogate_logits(m, g.constant(rows(data.features, idx))).value().detached();
    ConfusionCounts c;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const bool truth = data.labels[idx[i]] == kFake;
        const bool flagged = logits[2 * i + 1] >= logits[2 * i];
        if (truth && flagged) ++c.tp;
        else if (flagged) ++c.fp;
        else if (truth) ++c.fn;
        else ++c.tn;
    }
    return precision_recall_f1(c);
}

void fit_head(SurrogateClassifier& m, const LabeledFeatures& data, std::span<const std::size_t> train,
              const SurrogateTrainConfig& config, std::uint64_t seed)
{
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    oc.learning_rate = config.learning_rate;
    Tensor& w = m.params.at("head.w");
    Tensor& b = m.params.at("head.b");
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    Optimizer opt(oc, {&w, &b});
    std::vector<std::size_t> order(train.begin(), train.end());
    Rng rng(derive_seed(seed, "surrogate-batches"));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (auto [lo, hi] : batch_ranges(order.size(), config.batch_size)) {
            const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(data.labels[i]);
            opt.zero_grad();
            Graph g;
            Bindings bw{{"head.w", g.parameter(w)}, {"head.b", g.parameter(b)}};
            Var loss = ops::softmax_cross_entropy(head_logits(m.params, bw, g.constant(rows(data.features, idx))),
                                                  labels);
            g.backward(loss);
            opt.step();
        }
    }
    w.set_requires_grad(false);
    b.set_requires_grad(false);
}

SurrogateClassifier finish(SurrogateClassifier m, const LabeledFeatures& data, std::span<const std::size_t> test,
                           SurrogateReport* report)
{
    const Prf f1 = head_f1(m, data, test);
    if (report) report->test = f1;
    if (f1.f1 < 80.0) {
        throw AttackPrerequisiteError(
            fmt::format("surrogate classifier too weak: held-out F1 {:.2f} < 80 (attack prerequisite unmet)", f1.f1));
    }
    return m;
}

}  // namespace

std::string SurrogateClassifier::descriptor() const
{
    return "surrogate:v1:encoder=" + encoder->id() + ":size=" + std::to_string(encoder->arch.image_size);
}

SurrogateClassifier train_surrogate(std::span<const LabeledImage> fakes, std::span<const LabeledImage> reals,
                                    EncoderPtr encoder, const SurrogateTrainConfig& config, std::uint64_t seed,
                                    SurrogateReport* report)
{
    if (!encoder) throw std::invalid_argument("train_surrogate: encoder required");
    if (fakes.empty() || reals.empty()) throw std::invalid_argument("train_surrogate: both classes required");
    SurrogateClassifier m;
    m.encoder = std::move(encoder);
    const LabeledFeatures data = surrogate_data(*m.encoder, fakes, reals);
    std::vector<std::size_t> train, test;
    split_indices(data.labels, config.test_fraction, derive_seed(seed, "surrogate-split"), train, test);

    const std::size_t d = data.features.dim(1);
    Tensor mean({d}), sd({d});
    for (std::size_t i : train)
        for (std::size_t c = 0; c < d; ++c) mean[c] += data.features[i * d + c];
    for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<double>(train.size());
    for (std::size_t i : train)
        for (std::size_t c = 0; c < d; ++c) {
            const double v = data.features[i * d + c] - mean[c];
            sd[c] += v * v;
        }
    for (std::size_t c = 0; c < d; ++c) {
        sd[c] = std::sqrt(sd[c] / static_cast<double>(train.size()));
        if (sd[c] < 1e-8) sd[c] = 1.0;
    }
    m.params.add("feat_mean", std::move(mean));
    m.params.add("feat_std", std::move(sd));
    m.params.add("head.w", Tensor({2, d}));
    m.params.add("head.b", Tensor({2}));
    fit_head(m, data, train, config, seed);
    return finish(std::move(m), data, test, report);
}

SurrogateClassifier retrain_surrogate(const SurrogateClassifier& surrogate, std::span<const LabeledImage> fakes,
                                      std::span<const LabeledImage> reals, const SurrogateTrainConfig& config,
                                      std::uint64_t seed, SurrogateReport* report)
{
    SurrogateClassifier m{surrogate.encoder, surrogate.params.detached()};
    const LabeledFeatures data = surrogate_data(*m.encoder, fakes, reals);
    std::vector<std::size_t> train, test;
    split_indices(data.labels, config.test_fraction, derive_seed(seed, "surrogate-split"), train, test);
    fit_head(m, data, train, config, seed);
    return finish(std::move(m), data, test, report);
}

Var surrogate_logits(const SurrogateClassifier& m, const Var& embedding)
{
    Graph& g = embedding.graph();
    Var z = ops::standardize(embedding, m.params.at("feat_mean"), m.params.at("feat_std"));
    return ops::linear(z, g.constant(m.params.at("head.w").detached()), g.constant(m.params.at("head.b").detached()));
}

std::vector<std::array<double, 2>> surrogate_probabilities(const SurrogateClassifier& m,
                                                           std::span<const Tensor> images)
{
    std::vector<std::array<double, 2>> out;
    out.reserve(images.size());
    for (auto [lo, hi] : batch_ranges(images.size(), 128)) {
        Graph g;
        Var emb = encoder_forward(*m.encoder, g.constant(stack_images(images.subspan(lo, hi - lo)))).embedding;
        const Tensor z = surrogate_logits(m, emb).value().detached();
        for (std::size_t i = 0; i < hi - lo; ++i) {
            const double a = z[2 * i], b = z[2 * i + 1], mx = std::max(a, b);
            const double ea = std::exp(a - mx), eb = std::exp(b - mx);
            out.push_back({ea / (ea + eb), eb / (ea + eb)});
        }
    }
    return out;
}

Var perceptual_loss(const std::vector<Var>& taps_a, const std::vector<Var>& taps_b)
{
    if (taps_a.size() != taps_b.size() || taps_a.empty()) {
        throw std::invalid_argument("perceptual_loss: tap lists differ in length");
    }
    Var total;
    for (std::size_t l = 0; l < taps_a.size(); ++l) {
        Var term = ops::mse(ops::channel_unit_normalize(taps_a[l]), ops::channel_unit_normalize(taps_b[l]));
        total = total.valid() ? ops::add(total, term) : term;
    }
    return total;
}

double perceptual_loss(const FrozenEncoder& net, const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) {
        throw ShapeError("perceptual_loss: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Graph g;
    const Tensor ia[] = {a}, ib[] = {b};
    auto ta = encoder_forward(net, g.constant(stack_images(ia))).taps;
    auto tb = encoder_forward(net, g.constant(stack_images(ib))).taps;
    return perceptual_loss(ta, tb).value().item();
}

void AttackConfig::validate() const
{
    if (gamma < 0.0 || delta < 0.0) throw std::invalid_argument("attack: gamma and delta must be >= 0");
    if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
    optimizer.validate();
}

AttackConfig AttackConfig::large_encoder_preset()
{
    AttackConfig c;
    c.gamma = 0.02;
    return c;
}

AttackResult adversarial_update(const ConditionalGenerator& gen, const Tensor& source, const Condition& p,
                                const SurrogateClassifier& m, const FrozenEncoder& feature_net,
                                const AttackConfig& config)
{
    config.validate();
    validate_condition(p);
    const std::string frozen_before = m.checksum();

    const Tensor xs[] = {source};
    const Condition ps[] = {p};
    const Tensor x = stack_images(xs);
    const Tensor cond = stack_conditions(ps);
    const bool shared_net = m.encoder.get() == &feature_net;

    AttackResult r;
    r.x_clean = unstack_images(run_generator(gen, x, cond)).front();
    std::vector<Tensor> anchor_taps;
    {
        Graph g;
        const Tensor xc[] = {r.x_clean};
        for (const Var& t : encoder_forward(feature_net, g.constant(stack_images(xc))).taps)
            anchor_taps.push_back(t.value().detached());
    }

    r.theta_adv = gen.params.detached();
    r.theta_adv.set_requires_grad(true);
    Optimizer opt(config.optimizer, r.theta_adv.pointers());
    for (std::size_t it = 0; it < config.iterations; ++it) {
        opt.zero_grad();
        Graph g;
        Bindings w = bind(g, r.theta_adv, true);
        Var y = generator_forward(gen.arch, w, g.constant(x), g.constant(cond));
        const EncoderOutputs feats = encoder_forward(*m.encoder, y);
        const std::vector<Var> taps = shared_net ? feats.taps : encoder_forward(feature_net, y).taps;
        std::vector<Var> anchors;
        for (const Tensor& t : anchor_taps) anchors.push_back(g.constant(t));
        Var cls = ops::softmax_cross_entropy(surrogate_logits(m, feats.embedding), {kReal});
        Var loss = ops::add(ops::scale(cls, config.gamma), ops::scale(perceptual_loss(taps, anchors), config.delta));
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw AttackAbortedError("attack: non-finite loss", r.trace);
        r.trace.push_back(value);
        try {
            g.backward(loss);
        } catch (const NonFiniteError& e) {
            throw AttackAbortedError(std::string("attack: ") + e.what(), r.trace);
        }
        opt.step();
        for (const Tensor* t : r.theta_adv.pointers()) {
            if (!t->all_finite()) throw AttackAbortedError("attack: generator weights became non-finite", r.trace);
        }
    }
    r.theta_adv.set_requires_grad(false);
    const ConditionalGenerator adv{gen.arch, r.theta_adv, gen.seed};
    r.x_adv = unstack_images(run_generator(adv, x, cond)).front();
    if (m.checksum() != frozen_before) throw std::logic_error("attack: surrogate weights changed");
    return r;
}

std::vector<AttackInstance> craft_adversarial_set(const ConditionalGenerator& g, const SurrogateClassifier& m,
                                                  const FrozenEncoder& feature_net,
                                                  const std::vector<std::pair<std::string, Condition>>& pool,
                                                  std::span<const std::uint64_t> latent_seeds,
                                                  const AttackConfig& config, std::uint64_t seed)
{
    if (pool.size() != 8) {
        throw std::invalid_argument("craft_adversarial_set: prompt pool must hold 8 conditions, got "
                                    + std::to_string(pool.size()));
    }
    Rng rng(derive_seed(seed, "attack-prompts"));
    std::vector<AttackInstance> out(latent_seeds.size());
    for (std::size_t i = 0; i < latent_seeds.size(); ++i) {
        out[i].id = i;
        out[i].latent_seed = latent_seeds[i];
        out[i].prompt_index = rng.index(pool.size());
        out[i].condition = pool[out[i].prompt_index].second;
        out[i].source = canvas_image(g.arch.image_size, latent_seeds[i]);
    }
    std::vector<std::exception_ptr> errors(out.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < out.size(); ++i) {
        try {
            AttackResult r = adversarial_update(g, out[i].source, out[i].condition, m, feature_net, config);
            out[i].x_clean = quantize_8bit(r.x_clean);
            out[i].x_adv = quantize_8bit(r.x_adv);
            out[i].trace = std::move(r.trace);
            if (config.keep_weights) out[i].theta_adv = std::move(r.theta_adv);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    for (auto [lo, hi] : batch_ranges(out.size(), 128)) {
        std::vector<Tensor> clean, adv;
        for (std::size_t i = lo; i < hi; ++i) {
            clean.push_back(out[i].x_clean);
            adv.push_back(out[i].x_adv);
        }
        const auto pb = surrogate_probabilities(m, clean);
        const auto pa = surrogate_probabilities(m, adv);
        for (std::size_t i = lo; i < hi; ++i) {
            out[i].p_before = pb[i - lo];
            out[i].p_after = pa[i - lo];
        }
    }
    return out;
}

std::vector<LabeledImage> adversarial_images(std::span<const AttackInstance> instances)
{
    std::vector<LabeledImage> out;
    out.reserve(instances.size());
    for (const auto& a : instances)
        out.push_back({a.x_adv, a.condition, Provenance::FakeAdversarial, "", a.latent_seed});
    return out;
}

std::vector<LabeledImage> clean_images(std::span<const AttackInstance> instances)
{
    std::vector<LabeledImage> out;
    out.reserve(instances.size());
    for (const auto& a : instances) out.push_back({a.x_clean, a.condition, Provenance::FakeBase, "", a.latent_seed});
    return out;
}

}  // namespace dfb
