#include "dfb/encoder.hpp"

#include "dfb/batch.hpp"
#include "dfb/ops.hpp"
#include "dfb/optim.hpp"
#include "dfb/rng.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cstdio>
#include <numeric>

namespace dfb {

std::string to_string(EncoderTier tier)
{
    return tier == EncoderTier::Small ? "small" : "large";
}

EncoderTier parse_encoder_tier(const std::string& name)
{
    if (name == "small") return EncoderTier::Small;
    if (name == "large") return EncoderTier::Large;
    throw std::invalid_argument("unknown encoder tier '" + name + "' (expected small or large)");
}

std::string EncoderArch::descriptor() const
{
    return fmt::format("encoder:v1:size={}:widths={},{},{}", image_size, widths[0], widths[1], widths[2]);
}

EncoderArch EncoderArch::parse(const std::string& d)
{
    EncoderArch a;
    if (std::sscanf(d.c_str(), "encoder:v1:size=%zu:widths=%zu,%zu,%zu", &a.image_size, &a.widths[0], &a.widths[1],
                    &a.widths[2])
            != 4
        || a.descriptor() != d) {
        throw std::invalid_argument("not an encoder arch descriptor: '" + d + "'");
    }
    return a;
}

EncoderArch EncoderArch::for_tier(EncoderTier tier, std::size_t image_size)
{
    EncoderArch a;
    a.image_size = image_size;
    if (tier == EncoderTier::Large) a.widths = {16, 32, 32};
    return a;
}

EncoderTrainConfig EncoderTrainConfig::for_tier(EncoderTier tier)
{
    EncoderTrainConfig c;
    if (tier == EncoderTier::Large) c.images *= 10;
    return c;
}

namespace {

Bindings constant_bindings(Graph& g, const ParamSet& params)
{
    Bindings w;
    for (const auto& e : params.entries()) w.emplace(e.name, g.constant(e.tensor.detached()));
    return w;
}

EncoderOutputs forward_with(const EncoderArch& arch, Bindings& w, const Var& images)
{
    using namespace ops;
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 1 || s[2] != arch.image_size || s[3] != arch.image_size) {
        throw ShapeError("encoder: expected [N,1," + std::to_string(arch.image_size) + ","
                         + std::to_string(arch.image_size) + "], got " + shape_str(s));
    }
    EncoderOutputs out;
    // Fixed 3x3 binomial low-pass; its response is zero at the Nyquist frequency.
    Tensor blur({1, 1, 3, 3});
    const double taps[3] = {0.25, 0.5, 0.25};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) blur[static_cast<std::size_t>(i * 3 + j)] = taps[i] * taps[j];
    Var h = conv2d(images, images.graph().constant(std::move(blur)), 1, 1);
    std::vector<Var> pooled;
    for (int b = 0; b < 3; ++b) {
        const std::string name = "block" + std::to_string(b + 1);
        h = relu(add_channel_bias(conv2d(h, w.at(name + ".w"), 2, 1), w.at(name + ".b")));
        out.taps.push_back(h);
        pooled.push_back(global_avg_pool(h));
    }
    out.embedding = concat_features(pooled);
    return out;
}

Var head_with(Bindings& w, const Var& embedding)
{
    return ops::sigmoid(ops::linear(embedding, w.at("head.w"), w.at("head.b")));
}

}  // namespace

EncoderOutputs encoder_forward(const FrozenEncoder& enc, const Var& images)
{
    Bindings w = constant_bindings(images.graph(), enc.params);
    return forward_with(enc.arch, w, images);
}

Var attribute_head(const FrozenEncoder& enc, const Var& embedding)
{
    Graph& g = embedding.graph();
    Bindings w{{"head.w", g.constant(enc.params.at("head.w").detached())},
               {"head.b", g.constant(enc.params.at("head.b").detached())}};
    return head_with(w, embedding);
}

Tensor embed(const FrozenEncoder& enc, const Tensor& images)
{
    Graph g;
    return encoder_forward(enc, g.constant(images)).embedding.value().detached();
}

Tensor predict_attributes(const FrozenEncoder& enc, const Tensor& images)
{
    Graph g;
    return attribute_head(enc, encoder_forward(enc, g.constant(images)).embedding).value().detached();
}

FeatureSet embedding_features(const FrozenEncoder& enc, std::span<const Tensor> images)
{
    FeatureSet out;
    out.dim = enc.arch.embedding_dim();
    for (auto [b, e] : batch_ranges(images.size(), 128)) {
        const Tensor emb = embed(enc, stack_images(images.subspan(b, e - b)));
        out.values.insert(out.values.end(), emb.data().begin(), emb.data().end());
    }
    return out;
}

FeatureSet embedding_features(const FrozenEncoder& enc, std::span<const LabeledImage> images)
{
    std::vector<Tensor> pixels;
    pixels.reserve(images.size());
    for (const auto& im : images) pixels.push_back(im.pixels);
    return embedding_features(enc, pixels);
}

FrozenEncoder train_encoder(EncoderTier tier, const WorldConfig& world, const EncoderTrainConfig& config,
                            std::uint64_t seed)
{
    if (config.images == 0 || config.batch_size == 0) throw std::invalid_argument("train_encoder: empty configuration");
    FrozenEncoder enc;
    enc.tier = tier;
    enc.arch = EncoderArch::for_tier(tier, world.image_size);
    enc.seed = seed;
    enc.training_images = config.images;

    Rng init(derive_seed(seed, "encoder-init"));
    std::size_t in = 1;
    for (int b = 0; b < 3; ++b) {
        const std::string name = "block" + std::to_string(b + 1);
        const std::size_t c = enc.arch.widths[b];
        enc.params.add(name + ".w", init_weight({c, in, 4, 4}, in * 16, init));
        enc.params.add(name + ".b", Tensor({c}));
        in = c;
    }
    const std::size_t d = enc.arch.embedding_dim();
    enc.params.add("head.w", init_weight({kConditionDim, d}, d, init));
    enc.params.add("head.b", Tensor({kConditionDim}));

    const std::vector<LabeledImage> data = sample_real_set(world, config.images, derive_seed(seed, "encoder-data"));
    enc.params.set_requires_grad(true);
    OptimizerConfig oc;
    oc.kind = OptimizerKind::Adam;
    oc.learning_rate = config.learning_rate;
    Optimizer opt(oc, enc.params.pointers());

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(seed, "encoder-batches"));
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle.engine());
        for (auto [b, e] : batch_ranges(order.size(), config.batch_size)) {
            std::vector<Tensor> px;
            std::vector<Condition> conds;
            for (std::size_t i = b; i < e; ++i) {
                px.push_back(data[order[i]].pixels);
                conds.push_back(data[order[i]].condition);
            }
            opt.zero_grad();
            Graph g;
            Bindings w = bind(g, enc.params, true);
            EncoderOutputs o = forward_with(enc.arch, w, g.constant(stack_images(px)));
            Var loss = ops::mse(head_with(w, o.embedding), g.constant(stack_conditions(conds)));
            g.backward(loss);
            opt.step();
        }
    }
    enc.params.set_requires_grad(false);
    return enc;
}

double semantic_score(const FrozenEncoder& enc, const Tensor& image, const Condition& p)
{
    const Tensor images[] = {image};
    const Tensor attr = predict_attributes(enc, stack_images(images));
    return cosine_similarity(attr.data(), p);
}

std::vector<double> semantic_scores(const FrozenEncoder& enc, std::span<const LabeledImage> images)
{
    std::vector<double> out;
    out.reserve(images.size());
    for (auto [b, e] : batch_ranges(images.size(), 128)) {
        const Tensor attr = predict_attributes(enc, stack_images(images.subspan(b, e - b)));
        for (std::size_t i = b; i < e; ++i) {
            out.push_back(cosine_similarity(attr.data().subspan((i - b) * kConditionDim, kConditionDim),
                                            images[i].condition));
        }
    }
    return out;
}

double mean_semantic_score(const FrozenEncoder& enc, std::span<const LabeledImage> images)
{
    if (images.empty()) throw std::invalid_argument("mean_semantic_score: empty set");
    const auto s = semantic_scores(enc, images);
    return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

}  // namespace dfb
