#include "dfb/generator.hpp"

#include "dfb/batch.hpp"
#include "dfb/ops.hpp"
#include "dfb/optim.hpp"
#include "dfb/pgm.hpp"
#include "dfb/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <cstdio>

namespace dfb {

namespace {

constexpr double kSlope = 0.2;

std::size_t bottleneck_side(const GeneratorArch& a)
{
    return a.image_size / 4;
}

// Cycles through a deterministic reshuffle of [0, n) in minibatches.
class BatchCursor {
public:
    BatchCursor(std::size_t n, std::size_t batch, std::uint64_t seed) : order_(n), batch_(batch), rng_(seed)
    {
        std::iota(order_.begin(), order_.end(), 0);
        reshuffle();
    }

    std::vector<std::size_t> next()
    {
        if (pos_ >= order_.size()) {
            reshuffle();
            pos_ = 0;
        }
        const std::size_t end = std::min(order_.size(), pos_ + batch_);
        std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                     order_.begin() + static_cast<std::ptrdiff_t>(end));
        pos_ = end;
        return out;
    }

    std::size_t batches_per_epoch() const { return (order_.size() + batch_ - 1) / batch_; }

private:
    void reshuffle() { std::shuffle(order_.begin(), order_.end(), rng_.engine()); }

    std::vector<std::size_t> order_;
    std::size_t batch_;
    std::size_t pos_ = 0;
    Rng rng_;
};

struct PairBatch {
    Tensor sources, conditions, targets;
};

PairBatch gather(const std::vector<TrainingPair>& pairs, std::span<const std::size_t> idx)
{
    std::vector<Tensor> src, tgt;
    std::vector<Condition> cond;
    for (std::size_t i : idx) {
        src.push_back(pairs[i].source);
        tgt.push_back(pairs[i].target);
        cond.push_back(pairs[i].condition);
    }
    return {stack_images(src), stack_conditions(cond), stack_images(tgt)};
}

// Minibatch loop shared by full training and fine-tuning. `forward` builds
// the reconstruction loss for one batch inside the given graph.
template <typename Forward>
void run_steps(const std::vector<TrainingPair>& pairs, std::size_t steps, std::size_t batch, std::uint64_t seed,
               Optimizer& opt, Forward forward, std::vector<double>* losses)
{
    BatchCursor cursor(pairs.size(), batch, seed);
    double last_finite = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
        const auto idx = cursor.next();
        const PairBatch b = gather(pairs, idx);
        opt.zero_grad();
        Graph g;
        double loss_value = 0.0;
        try {
            Var loss = forward(g, b);
            loss_value = loss.value().item();
            g.backward(loss);
            opt.step();
        } catch (const NonFiniteError& e) {
            throw DivergenceError(std::string("generator training diverged: ") + e.what(), last_finite);
        }
        last_finite = loss_value;
        if (losses) losses->push_back(loss_value);
    }
}

}  // namespace

std::string GeneratorArch::descriptor() const
{
    return fmt::format("generator:v1:size={}:enc={}:bottleneck={}", image_size, enc_channels, bottleneck_channels);
}

GeneratorArch GeneratorArch::parse(const std::string& d)
{
    GeneratorArch a;
    if (std::sscanf(d.c_str(), "generator:v1:size=%zu:enc=%zu:bottleneck=%zu", &a.image_size, &a.enc_channels,
                    &a.bottleneck_channels)
            != 3
        || a.descriptor() != d) {
        throw std::invalid_argument("not a generator arch descriptor: '" + d + "'");
    }
    return a;
}

ConditionalGenerator ConditionalGenerator::initialize(const GeneratorArch& arch, std::uint64_t seed)
{
    if (arch.image_size < 32 || arch.image_size % 4 != 0) {
        throw std::invalid_argument("generator: image size must be a multiple of 4 and >= 32");
    }
    Rng rng(derive_seed(seed, "generator-init"));
    const std::size_t c1 = arch.enc_channels, c2 = arch.bottleneck_channels, h = bottleneck_side(arch);
    ConditionalGenerator g;
    g.arch = arch;
    g.seed = seed;
    auto& p = g.params;
    p.add("enc1.w", init_weight({c1, 1, 4, 4}, 16, rng));
    p.add("enc1.b", Tensor({c1}));
    p.add("enc2.w", init_weight({c2, c1, 4, 4}, c1 * 16, rng));
    p.add("enc2.b", Tensor({c2}));
    p.add("inject.w", init_weight({2 * c2, kConditionDim}, kConditionDim, rng, 0.1));
    p.add("inject.b", Tensor({2 * c2}));
    p.add("map.w", init_weight({c2 * h * h, kConditionDim}, kConditionDim, rng, 0.1));
    p.add("map.b", Tensor({c2 * h * h}));
    p.add("mid.w", init_weight({c2, c2, 3, 3}, c2 * 9, rng));
    p.add("mid.b", Tensor({c2}));
    // Transposed-conv fan-in: each output sees about K*K/stride^2 taps per channel.
    p.add("dec1.w", init_weight({c2, c1, 4, 4}, c2 * 4, rng));
    p.add("dec1.b", Tensor({c1}));
    p.add("dec2.w", init_weight({c1, 1, 4, 4}, c1 * 4, rng, 0.5));
    p.add("dec2.b", Tensor({1}));
    return g;
}

Var generator_forward(const GeneratorArch& arch, Bindings& w, const Var& x, const Var& p)
{
    using namespace ops;
    const std::size_t n = x.shape()[0], c2 = arch.bottleneck_channels, h = bottleneck_side(arch);
    if (x.shape() != Shape{n, 1, arch.image_size, arch.image_size} || p.shape() != Shape{n, kConditionDim}) {
        throw ShapeError("generator: expected x [N,1," + std::to_string(arch.image_size) + ","
                         + std::to_string(arch.image_size) + "] and p [N,8], got " + shape_str(x.shape()) + " and "
                         + shape_str(p.shape()));
    }
    Var e1 = leaky_relu(add_channel_bias(conv2d(x, w.at("enc1.w"), 2, 1), w.at("enc1.b")), kSlope);
    Var e2 = leaky_relu(add_channel_bias(conv2d(e1, w.at("enc2.w"), 2, 1), w.at("enc2.b")), kSlope);

    Var mod = linear(p, w.at("inject.w"), w.at("inject.b"));
    // Split [N, 2C] into gamma and beta through two selection matmuls.
    Tensor pick_gamma({2 * c2, c2}), pick_beta({2 * c2, c2});
    for (std::size_t c = 0; c < c2; ++c) {
        pick_gamma[c * c2 + c] = 1.0;
        pick_beta[(c2 + c) * c2 + c] = 1.0;
    }
    Graph& g = x.graph();
    Var gamma = matmul(mod, g.constant(std::move(pick_gamma)));
    Var beta = matmul(mod, g.constant(std::move(pick_beta)));
    Var z = film(e2, gamma, beta);
    Var spatial = reshape(linear(p, w.at("map.w"), w.at("map.b")), {n, c2, h, h});
    z = add(z, spatial);

    Var m = leaky_relu(add_channel_bias(conv2d(z, w.at("mid.w"), 1, 1), w.at("mid.b")), kSlope);
    Var d1 = leaky_relu(add_channel_bias(conv2d_transpose(m, w.at("dec1.w"), 2, 1), w.at("dec1.b")), kSlope);
    d1 = add(d1, e1);
    return sigmoid(add_channel_bias(conv2d_transpose(d1, w.at("dec2.w"), 2, 1), w.at("dec2.b")));
}

Tensor run_generator(const ConditionalGenerator& gen, const Tensor& sources, const Tensor& conditions)
{
    Graph g;
    Bindings w;
    for (const auto& e : gen.params.entries()) w.emplace(e.name, g.constant(e.tensor.detached()));
    return generator_forward(gen.arch, w, g.constant(sources), g.constant(conditions)).value().detached();
}

Tensor canvas_image(std::size_t image_size, std::uint64_t latent_seed)
{
    WorldConfig base;
    base.image_size = image_size;
    // Every blob visible with crisp edges, so the canvas exposes the full content layout.
    Condition c = sample_condition(derive_seed(latent_seed, "canvas-condition"));
    c[kBlobCount] = 1.0;
    c[kSharpness] = 1.0;
    return render_image(base, c, content_seed_of(latent_seed), derive_seed(latent_seed, "canvas-noise"));
}

std::vector<TrainingPair> make_pairs(const WorldConfig& world, std::size_t count, std::uint64_t seed)
{
    std::vector<TrainingPair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t s = derive_seed(seed, i);
        const Condition p = sample_condition(s);
        out.push_back({canvas_image(world.image_size, s), p, sample_real_pixels(world, p, s)});
    }
    return out;
}

ConditionalGenerator train_generator(const std::vector<TrainingPair>& train, const std::vector<TrainingPair>& val,
                                     const GeneratorArch& arch, const GeneratorTrainConfig& config, std::uint64_t seed,
                                     GeneratorTrainReport* report)
{
    if (train.empty()) throw std::invalid_argument("train_generator: empty dataset");
    ConditionalGenerator gen = ConditionalGenerator::initialize(arch, seed);
    gen.params.set_requires_grad(true);
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    oc.learning_rate = config.learning_rate;
    Optimizer opt(oc, gen.params.pointers());

    const std::size_t per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    std::vector<double> losses;
    run_steps(train, per_epoch * config.epochs, config.batch_size, derive_seed(seed, "generator-batches"), opt,
              [&](Graph& g, const PairBatch& b) {
                  Bindings w = bind(g, gen.params, true);
                  Var out = generator_forward(gen.arch, w, g.constant(b.sources), g.constant(b.conditions));
                  return ops::mse(out, g.constant(b.targets));
              },
              &losses);
    gen.params.set_requires_grad(false);

    if (report) {
        report->epoch_loss.clear();
        for (std::size_t e = 0; e < config.epochs; ++e) {
            double acc = 0.0;
            for (std::size_t i = 0; i < per_epoch; ++i) acc += losses[e * per_epoch + i];
            report->epoch_loss.push_back(acc / static_cast<double>(per_epoch));
        }
        report->train_mse = reconstruction_mse(gen, train);
        report->val_mse = val.empty() ? report->train_mse : reconstruction_mse(gen, val);
        report->below_threshold = report->val_mse < config.val_threshold;
    }
    return gen;
}

double reconstruction_mse(const ConditionalGenerator& gen, const std::vector<TrainingPair>& pairs)
{
    if (pairs.empty()) throw std::invalid_argument("reconstruction_mse: empty set");
    double acc = 0.0;
    std::size_t count = 0;
    for (auto [b, e] : batch_ranges(pairs.size(), 64)) {
        std::vector<std::size_t> idx(e - b);
        std::iota(idx.begin(), idx.end(), b);
        const PairBatch batch = gather(pairs, idx);
        const Tensor out = run_generator(gen, batch.sources, batch.conditions);
        for (std::size_t i = 0; i < out.numel(); ++i) {
            const double d = out[i] - batch.targets[i];
            acc += d * d;
        }
        count += out.numel();
    }
    return acc / static_cast<double>(count);
}

LabeledImage generate(const ConditionalGenerator& g, const Condition& p, std::uint64_t latent_seed,
                      Provenance provenance, const std::string& variant)
{
    const Condition conds[] = {p};
    const std::uint64_t seeds[] = {latent_seed};
    return generate_many(g, conds, seeds, provenance, variant).front();
}

std::vector<LabeledImage> generate_many(const ConditionalGenerator& g, std::span<const Condition> conditions,
                                        std::span<const std::uint64_t> latent_seeds, Provenance provenance,
                                        const std::string& variant)
{
    if (conditions.size() != latent_seeds.size()) throw std::invalid_argument("generate_many: size mismatch");
    for (const Condition& c : conditions) validate_condition(c);
    std::vector<LabeledImage> out;
    out.reserve(conditions.size());
    for (auto [b, e] : batch_ranges(conditions.size(), 64)) {
        std::vector<Tensor> canvases;
        for (std::size_t i = b; i < e; ++i) canvases.push_back(canvas_image(g.arch.image_size, latent_seeds[i]));
        const Tensor images = run_generator(g, stack_images(canvases), stack_conditions(conditions.subspan(b, e - b)));
        auto list = unstack_images(images);
        for (std::size_t i = b; i < e; ++i) {
            out.push_back({quantize_8bit(list[i - b]), conditions[i], provenance, variant, latent_seeds[i]});
        }
    }
    return out;
}

std::size_t LowRankAdapter::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& f : factors) n += f.a.numel() + f.b.numel();
    return n;
}

ParamSet LowRankAdapter::as_params() const
{
    ParamSet p;
    for (const auto& f : factors) {
        p.add(f.target + ".lora_a", f.a.detached());
        p.add(f.target + ".lora_b", f.b.detached());
    }
    return p;
}

LowRankAdapter LowRankAdapter::from_params(const ParamSet& params, std::size_t rank)
{
    LowRankAdapter out;
    out.rank = rank;
    const auto& e = params.entries();
    if (e.size() % 2 != 0) throw std::invalid_argument("adapter: unpaired LoRA factors");
    for (std::size_t i = 0; i < e.size(); i += 2) {
        const std::string suffix = ".lora_a";
        if (e[i].name.size() <= suffix.size() || e[i].name.compare(e[i].name.size() - suffix.size(), suffix.size(), suffix) != 0) {
            throw std::invalid_argument("adapter: unexpected tensor '" + e[i].name + "'");
        }
        const std::string target = e[i].name.substr(0, e[i].name.size() - suffix.size());
        if (e[i + 1].name != target + ".lora_b") throw std::invalid_argument("adapter: missing B for " + target);
        out.factors.push_back({target, e[i].tensor.detached(), e[i + 1].tensor.detached()});
    }
    return out;
}

const std::vector<std::string>& default_lora_targets()
{
    static const std::vector<std::string> targets = {"inject.w", "mid.w"};
    return targets;
}

LowRankAdapter init_adapter(const ConditionalGenerator& g, std::size_t rank, std::uint64_t seed,
                            const std::vector<std::string>& targets)
{
    if (rank < 1) throw std::invalid_argument("LoRA rank must be >= 1");
    Rng rng(derive_seed(seed, "lora-init"));
    LowRankAdapter out;
    out.rank = rank;
    for (const auto& name : targets) {
        const Tensor& w = g.params.at(name);
        const std::size_t rows = w.dim(0), cols = w.numel() / rows;
        if (rank > std::min(rows, cols)) {
            throw std::invalid_argument(fmt::format("LoRA rank {} exceeds dims of {} viewed as [{}x{}]", rank, name, rows, cols));
        }
        Tensor a({rank, cols});
        const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
        for (double& v : a.data()) v = rng.uniform(-bound, bound);
        out.factors.push_back({name, std::move(a), Tensor({rows, rank})});
    }
    return out;
}

namespace {

void bind_lora(Graph& g, Bindings& w, const ConditionalGenerator& base, LowRankAdapter& adapter, double alpha)
{
    for (auto& f : adapter.factors) {
        const Tensor& base_w = base.params.at(f.target);
        Var delta = ops::scale(ops::matmul(g.parameter(f.b), g.parameter(f.a)), alpha);
        w[f.target] = ops::add(w.at(f.target), ops::reshape(delta, base_w.shape()));
    }
}

}  // namespace

LowRankAdapter customize_lora(const ConditionalGenerator& gen, const std::vector<TrainingPair>& shifted,
                              std::size_t rank, const CustomizeConfig& config, std::uint64_t seed)
{
    LowRankAdapter adapter = init_adapter(gen, rank, seed);
    if (config.steps == 0) return adapter;
    if (shifted.empty()) throw std::invalid_argument("customize_lora: empty dataset");
    std::vector<Tensor*> trainable;
    for (auto& f : adapter.factors) {
        f.a.set_requires_grad(true);
        f.b.set_requires_grad(true);
        trainable.push_back(&f.a);
        trainable.push_back(&f.b);
    }
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    oc.learning_rate = config.learning_rate;
    Optimizer opt(oc, trainable);
    ParamSet frozen = gen.params.detached();
    run_steps(shifted, config.steps, config.batch_size, derive_seed(seed, "lora-batches"), opt,
              [&](Graph& g, const PairBatch& b) {
                  Bindings w = bind(g, frozen, false);
                  bind_lora(g, w, gen, adapter, config.train_alpha);
                  Var out = generator_forward(gen.arch, w, g.constant(b.sources), g.constant(b.conditions));
                  return ops::mse(out, g.constant(b.targets));
              },
              nullptr);
    for (auto& f : adapter.factors) {
        f.a.set_requires_grad(false);
        f.b.set_requires_grad(false);
    }
    return adapter;
}

ConditionalGenerator apply_lora(const ConditionalGenerator& gen, const LowRankAdapter& adapter, double alpha)
{
    ConditionalGenerator out{gen.arch, gen.params.detached(), gen.seed};
    for (const auto& f : adapter.factors) {
        Tensor& w = out.params.at(f.target);
        const std::size_t rows = w.dim(0), cols = w.numel() / rows;
        if (f.b.shape() != Shape{rows, adapter.rank} || f.a.shape() != Shape{adapter.rank, cols}) {
            throw ShapeError("apply_lora: adapter for " + f.target + " has A" + shape_str(f.a.shape()) + " B"
                             + shape_str(f.b.shape()) + ", target viewed as [" + std::to_string(rows) + "x"
                             + std::to_string(cols) + "]");
        }
        if (alpha == 0.0) continue;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < adapter.rank; ++k) acc += f.b[r * adapter.rank + k] * f.a[k * cols + c];
                w[r * cols + c] += alpha * acc;
            }
    }
    return out;
}

ConditionalGenerator customize_full(const ConditionalGenerator& gen, const std::vector<TrainingPair>& shifted,
                                    const CustomizeConfig& config, std::uint64_t seed)
{
    ConditionalGenerator out{gen.arch, gen.params.detached(), gen.seed};
    if (config.steps == 0) return out;
    if (shifted.empty()) throw std::invalid_argument("customize_full: empty dataset");
    out.params.set_requires_grad(true);
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    oc.learning_rate = config.learning_rate;
    Optimizer opt(oc, out.params.pointers());
    run_steps(shifted, config.steps, config.batch_size, derive_seed(seed, "fm-batches"), opt,
              [&](Graph& g, const PairBatch& b) {
                  Bindings w = bind(g, out.params, true);
                  Var y = generator_forward(out.arch, w, g.constant(b.sources), g.constant(b.conditions));
                  return ops::mse(y, g.constant(b.targets));
              },
              nullptr);
    out.params.set_requires_grad(false);
    return out;
}

}  // namespace dfb
