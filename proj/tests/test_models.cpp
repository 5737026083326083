#include "dfb/attack.hpp"
#include "dfb/checkpoint.hpp"
#include "dfb/config.hpp"
#include "dfb/detector.hpp"
#include "dfb/generator.hpp"
#include "dfb/pgm.hpp"
#include "dfb/pipeline.hpp"
#include "test_helpers.hpp"

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include <filesystem>

namespace dfb {
namespace {

namespace fs = std::filesystem;
using test::random_tensor;

constexpr std::size_t kSize = 32;

WorldConfig small_world()
{
    WorldConfig w = ExperimentConfig::default_world();
    w.image_size = kSize;
    return w;
}

TEST(World, RenderingIsAPureFunctionOfSeeds)
{
    const WorldConfig w = small_world();
    const Condition c = sample_condition(3);
    EXPECT_TRUE(render_image(w, c, 11, 12).same_bytes(render_image(w, c, 11, 12)));
    EXPECT_FALSE(render_image(w, c, 11, 12).same_bytes(render_image(w, c, 11, 13)));
    const Tensor img = render_image(w, c, 11, 12);
    for (double v : img.data()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(World, DatasetImagesAreQuantized)
{
    const LabeledImage r = sample_real(small_world(), sample_condition(4), 5);
    EXPECT_TRUE(quantize_8bit(r.pixels).same_bytes(r.pixels));
    EXPECT_FALSE(r.is_fake());
}

TEST(World, SplitIsBalancedAndPaired)
{
    const WorldConfig w = small_world();
    const FakeMaker fake = [&](const Condition& c, std::uint64_t seed) {
        LabeledImage img = sample_real(w, c, seed);
        img.provenance = Provenance::FakeBase;
        return img;
    };
    const DatasetSplit s = build_split(w, 50, fake, 21);
    EXPECT_EQ(s.train.real_count() + s.val.real_count() + s.test.real_count(), 50u);
    for (const DatasetSlice* slice : {&s.train, &s.val, &s.test}) {
        EXPECT_EQ(slice->real_count(), slice->fake_count());
    }
    EXPECT_EQ(s.test.real_count(), 5u);
    EXPECT_EQ(s.val.real_count(), 5u);
}

TEST(World, EveryShiftIsValid)
{
    for (const auto& name : shift_names()) {
        const WorldConfig shifted = shift_distribution(small_world(), name);
        EXPECT_NO_THROW(shifted.validate()) << name;
        EXPECT_FALSE(shifted == small_world()) << name;
    }
    EXPECT_TRUE(shift_distribution(small_world(), "identity") == small_world());
    EXPECT_THROW(shift_distribution(small_world(), "no-such-shift"), std::exception);
}

TEST(Rng, DerivedSeedsDifferByTag)
{
    EXPECT_NE(derive_seed(1, "split"), derive_seed(1, "generator"));
    EXPECT_NE(derive_seed(1, "split"), derive_seed(2, "split"));
    EXPECT_EQ(derive_seed(1, "split"), derive_seed(1, "split"));
}

ConditionalGenerator two_by_two_generator()
{
    ConditionalGenerator g;
    g.params.add("w", Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}));
    return g;
}

TEST(Lora, HandComputedUpdate)
{
    LowRankAdapter a;
    a.rank = 1;
    a.factors.push_back({"w", Tensor({1, 2}, std::vector<double>{0.5, -1.0}), Tensor({2, 1}, std::vector<double>{1.0, 2.0})});
    // W + 0.5 * B A = [[1,2],[3,4]] + 0.5 * [[0.5,-1],[1,-2]]
    const ConditionalGenerator out = apply_lora(two_by_two_generator(), a, 0.5);
    const Tensor& w = out.params.at("w");
    EXPECT_DOUBLE_EQ(w[0], 1.25);
    EXPECT_DOUBLE_EQ(w[1], 1.5);
    EXPECT_DOUBLE_EQ(w[2], 3.5);
    EXPECT_DOUBLE_EQ(w[3], 3.0);
}

TEST(Lora, ZeroAlphaAndFreshAdapterLeaveWeightsUntouched)
{
    const ConditionalGenerator g = ConditionalGenerator::initialize(GeneratorArch{kSize, 4, 8}, 3);
    const LowRankAdapter fresh = init_adapter(g, 2, 5);
    EXPECT_TRUE(apply_lora(g, fresh, 0.5).params.same_bytes(g.params));
    LowRankAdapter nonzero = fresh;
    for (auto& f : nonzero.factors)
        for (double& v : f.b.data()) v = 0.1;
    EXPECT_TRUE(apply_lora(g, nonzero, 0.0).params.same_bytes(g.params));
    EXPECT_FALSE(apply_lora(g, nonzero, 0.5).params.same_bytes(g.params));
}

TEST(Lora, UpdateRankIsBoundedByAdapterRank)
{
    const GeneratorArch arch{kSize, 4, 8};
    const ConditionalGenerator g = ConditionalGenerator::initialize(arch, 3);
    WorldConfig shifted = shift_distribution(small_world(), shift_names().front());
    const auto pairs = make_pairs(shifted, 12, 17);
    CustomizeConfig cc;
    cc.steps = 4;
    cc.batch_size = 4;
    const std::size_t rank = 2;
    const LowRankAdapter a = customize_lora(g, pairs, rank, cc, 8);
    const ConditionalGenerator tuned = apply_lora(g, a, 0.5);
    for (const auto& f : a.factors) {
        const Tensor& w0 = g.params.at(f.target);
        const Tensor& w1 = tuned.params.at(f.target);
        const std::size_t rows = w0.dim(0), cols = w0.numel() / rows;
        Eigen::MatrixXd delta(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) delta(r, c) = w1[r * cols + c] - w0[r * cols + c];
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(delta);
        svd.setThreshold(1e-10);
        EXPECT_GT(svd.rank(), 0) << f.target;
        EXPECT_LE(static_cast<std::size_t>(svd.rank()), rank) << f.target;
    }
    EXPECT_EQ(a.parameter_count(), [&] {
        std::size_t n = 0;
        for (const auto& f : a.factors) n += f.a.numel() + f.b.numel();
        return n;
    }());
}

TEST(Generator, OutputIsDeterministicAndQuantized)
{
    const ConditionalGenerator g = ConditionalGenerator::initialize(GeneratorArch{kSize, 4, 8}, 3);
    const Condition c = sample_condition(9);
    const LabeledImage a = generate(g, c, 77);
    const LabeledImage b = generate(g, c, 77);
    EXPECT_TRUE(a.pixels.same_bytes(b.pixels));
    EXPECT_TRUE(quantize_8bit(a.pixels).same_bytes(a.pixels));
    EXPECT_EQ(a.provenance, Provenance::FakeBase);
}

TEST(Generator, TrainingIsReproducible)
{
    const auto train = make_pairs(small_world(), 16, 1);
    const auto val = make_pairs(small_world(), 4, 2);
    GeneratorTrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    GeneratorTrainReport r1, r2;
    const auto g1 = train_generator(train, val, GeneratorArch{kSize, 4, 8}, tc, 5, &r1);
    const auto g2 = train_generator(train, val, GeneratorArch{kSize, 4, 8}, tc, 5, &r2);
    EXPECT_TRUE(g1.params.same_bytes(g2.params));
    EXPECT_EQ(r1.val_mse, r2.val_mse);
    EXPECT_EQ(r1.below_threshold, r1.val_mse < tc.val_threshold);
}

// Small end-to-end fixture shared by the detector and attack tests.
class TinyWorld : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        world_ = new WorldConfig(small_world());
        GeneratorTrainConfig tc;
        tc.epochs = 3;
        gen_ = new ConditionalGenerator(train_generator(make_pairs(*world_, 64, 1), make_pairs(*world_, 8, 2),
                                                        GeneratorArch{kSize, 4, 8}, tc, 3));
        EncoderTrainConfig ec;
        ec.images = 64;
        ec.epochs = 2;
        encoder_ = std::make_shared<const FrozenEncoder>(train_encoder(EncoderTier::Small, *world_, ec, 4));
        const FakeMaker fake = [](const Condition& c, std::uint64_t seed) { return generate(*gen_, c, seed); };
        split_ = new DatasetSplit(build_split(*world_, 120, fake, 5));
    }
    static void TearDownTestSuite()
    {
        delete world_;
        delete gen_;
        delete split_;
        encoder_.reset();
    }

    static Detector train(const std::string& kind, std::size_t epochs = 10)
    {
        const DetectorSpec spec = DetectorSpec::parse(kind);
        DetectorTrainConfig dc = DetectorTrainConfig::for_kind(spec.kind);
        dc.epochs = epochs;
        return train_detector(spec, *split_, dc, 6, spec.kind == DetectorKind::Embedding ? encoder_ : nullptr);
    }

    static WorldConfig* world_;
    static ConditionalGenerator* gen_;
    static EncoderPtr encoder_;
    static DatasetSplit* split_;
};

WorldConfig* TinyWorld::world_ = nullptr;
ConditionalGenerator* TinyWorld::gen_ = nullptr;
EncoderPtr TinyWorld::encoder_;
DatasetSplit* TinyWorld::split_ = nullptr;

TEST_F(TinyWorld, EnsembleFlagsAreTheUnionOfMemberFlags)
{
    const Detector dct = train("dct-lr");
    const Detector emb = train("embedding-small");
    const std::vector<const Detector*> members{&dct, &emb};
    const auto& images = split_->test.images;
    const auto flags = ensemble_predict_batch(members, images);
    const auto a = predict_batch(dct, std::span<const LabeledImage>(images));
    const auto b = predict_batch(emb, std::span<const LabeledImage>(images));
    for (std::size_t i = 0; i < images.size(); ++i) {
        EXPECT_EQ(flags[i], a[i].fake || b[i].fake) << i;
        if (a[i].fake || b[i].fake) {
            EXPECT_TRUE(flags[i]);
        }
    }
    EXPECT_GE(evaluate_ensemble(members, images).recall, evaluate(dct, images).recall);
}

TEST_F(TinyWorld, ThresholdTieCountsAsFake)
{
    Detector d = train("dct-lr", 2);
    const Prediction p = predict(d, split_->test.images.front().pixels);
    d.threshold = p.score;
    EXPECT_TRUE(predict(d, split_->test.images.front().pixels).fake);
}

TEST_F(TinyWorld, DetectorCheckpointRoundTrip)
{
    const Detector d = train("embedding-small", 2);
    const Checkpoint c = parse_checkpoint(serialize_checkpoint(to_checkpoint(d, 6, "x")));
    const Detector back = detector_from_checkpoint(c, encoder_);
    EXPECT_TRUE(back.params.same_bytes(d.params));
    const Tensor& img = split_->test.images.front().pixels;
    EXPECT_EQ(predict(back, img).score, predict(d, img).score);

    EncoderTrainConfig ec;
    ec.images = 16;
    ec.epochs = 1;
    const auto other = std::make_shared<const FrozenEncoder>(train_encoder(EncoderTier::Small, *world_, ec, 99));
    EXPECT_THROW(detector_from_checkpoint(c, other), CheckpointMismatchError);
}

TEST_F(TinyWorld, AttackKeepsSurrogateFrozenAndAddsNoNoise)
{
    std::vector<LabeledImage> fakes, reals;
    for (const auto& img : split_->train.images) (img.is_fake() ? fakes : reals).push_back(img);
    SurrogateTrainConfig sc;
    sc.epochs = 20;
    SurrogateClassifier m;
    try {
        m = train_surrogate(fakes, reals, encoder_, sc, 7);
    } catch (const AttackPrerequisiteError& e) {
        GTEST_SKIP() << "surrogate too weak on the tiny world: " << e.what();
    }
    const std::string m_sum = m.checksum(), enc_sum = encoder_->checksum(), g_sum = gen_->params.digest();

    AttackConfig ac;
    ac.iterations = 5;
    ac.keep_weights = true;
    const std::vector<std::uint64_t> latents{101, 102, 103};
    const auto set = craft_adversarial_set(*gen_, m, *encoder_, prompt_pool(), latents, ac, 8);
    ASSERT_EQ(set.size(), latents.size());

    EXPECT_EQ(m.checksum(), m_sum);
    EXPECT_EQ(encoder_->checksum(), enc_sum);
    EXPECT_EQ(gen_->params.digest(), g_sum);
    for (const auto& inst : set) {
        const ConditionalGenerator adv{gen_->arch, inst.theta_adv, gen_->seed};
        const LabeledImage regen = generate(adv, inst.condition, inst.latent_seed);
        EXPECT_TRUE(regen.pixels.same_bytes(inst.x_adv)) << "instance " << inst.id;
        EXPECT_TRUE(generate(*gen_, inst.condition, inst.latent_seed).pixels.same_bytes(inst.x_clean));
        EXPECT_EQ(inst.trace.size(), ac.iterations);
    }

    const auto again = craft_adversarial_set(*gen_, m, *encoder_, prompt_pool(), latents, ac, 8);
    for (std::size_t i = 0; i < set.size(); ++i) EXPECT_TRUE(again[i].x_adv.same_bytes(set[i].x_adv));
}

TEST(Pipeline, UnknownNameListsValidPipelines)
{
    ExperimentConfig c;
    c.out_dir = (fs::temp_directory_path() / "dfb-test-unknown").string();
    Workspace ws(c, false);
    try {
        run_pipeline("nope", ws);
        FAIL() << "expected PipelineError";
    } catch (const PipelineError& e) {
        const std::string msg = e.what();
        for (const auto& name : pipeline_names()) EXPECT_NE(msg.find(name), std::string::npos) << msg;
    }
}

TEST(Pipeline, MissingPrerequisiteNamesProducer)
{
    ExperimentConfig c;
    c.out_dir = (fs::temp_directory_path() / "dfb-test-missing").string();
    fs::remove_all(c.out_dir);
    Workspace ws(c, false);
    ws.allow("attack");
    try {
        ws.surrogate();
        FAIL() << "expected MissingPrerequisiteError";
    } catch (const MissingPrerequisiteError& e) {
        EXPECT_EQ(e.producer(), "baseline");
        EXPECT_NE(std::string(e.what()).find("baseline"), std::string::npos);
    }
}

}  // namespace
}  // namespace dfb
