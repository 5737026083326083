#include "dfb/checkpoint.hpp"
#include "dfb/config.hpp"
#include "dfb/digest.hpp"
#include "dfb/pgm.hpp"
#include "dfb/report.hpp"
#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace dfb {
namespace {

namespace fs = std::filesystem;
using test::random_tensor;

fs::path scratch_dir(const std::string& name)
{
    const fs::path dir = fs::temp_directory_path() / ("dfb-test-" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Checkpoint sample_checkpoint()
{
    Checkpoint c;
    c.arch = "generator:v1:size=8";
    c.seed = 42;
    c.config_digest = "abc123";
    c.metadata = {{"tier", "small"}, {"note", "x"}};
    c.tensors.add("w", random_tensor({2, 3, 4}, 1));
    c.tensors.add("b", random_tensor({5}, 2));
    return c;
}

TEST(Checkpoint, RoundTripIsByteIdentical)
{
    const std::string bytes = serialize_checkpoint(sample_checkpoint());
    const Checkpoint back = parse_checkpoint(bytes);
    EXPECT_EQ(back.arch, "generator:v1:size=8");
    EXPECT_EQ(back.kind(), "generator");
    EXPECT_EQ(back.seed, 42u);
    EXPECT_EQ(back.meta("tier"), "small");
    EXPECT_TRUE(back.tensors.same_bytes(sample_checkpoint().tensors));
    EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, EveryFlippedByteIsDetected)
{
    const std::string bytes = serialize_checkpoint(sample_checkpoint());
    for (std::size_t i = 0; i < bytes.size(); i += 7) {
        std::string bad = bytes;
        bad[i] = static_cast<char>(bad[i] ^ 0x5A);
        EXPECT_THROW(parse_checkpoint(bad), ParseError) << "byte " << i;
    }
}

TEST(Checkpoint, TruncationAndTrailingBytesAreDetected)
{
    const std::string bytes = serialize_checkpoint(sample_checkpoint());
    for (std::size_t n : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(parse_checkpoint(bytes.substr(0, n)), ParseError) << "length " << n;
    }
    EXPECT_THROW(parse_checkpoint(bytes + "x"), ParseError);
}

TEST(Checkpoint, WrongKindIsRefused)
{
    const fs::path dir = scratch_dir("ckpt-kind");
    const std::string path = (dir / "g.ckpt").string();
    save_checkpoint(sample_checkpoint(), path);
    EXPECT_NO_THROW(load_checkpoint(path, "generator"));
    EXPECT_THROW(load_checkpoint(path, "detector"), CheckpointMismatchError);
    EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), std::exception);
}

TEST(Checkpoint, GeneratorRoundTrip)
{
    const ConditionalGenerator g = ConditionalGenerator::initialize(GeneratorArch{32, 4, 8}, 9);
    const Checkpoint c = parse_checkpoint(serialize_checkpoint(to_checkpoint(g, "d")));
    const ConditionalGenerator back = generator_from_checkpoint(c);
    EXPECT_EQ(back.arch, g.arch);
    EXPECT_TRUE(back.params.same_bytes(g.params));
    EXPECT_THROW(encoder_from_checkpoint(c), CheckpointMismatchError);
}

TEST(Config, DefaultsRoundTripThroughIni)
{
    const ExperimentConfig c;
    const ExperimentConfig back = parse_config(to_ini(c));
    EXPECT_EQ(back.canonical_text(), c.canonical_text());
    EXPECT_EQ(back.digest(), c.digest());
}

TEST(Config, OverridesAreApplied)
{
    const ExperimentConfig c = parse_config("[run]\nseed = 7\n[attack]\niterations = 12\n[variants]\nlist = fm:denoise\n");
    EXPECT_EQ(c.seed, 7u);
    EXPECT_EQ(c.attack.iterations, 12u);
    ASSERT_EQ(c.variants.size(), 1u);
    EXPECT_EQ(c.variants[0].id(), "fm:denoise");
    EXPECT_NE(c.digest(), ExperimentConfig{}.digest());
}

TEST(Config, MalformedInputIsRejected)
{
    EXPECT_THROW(parse_config("[nope]\nx = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nbogus = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("[run]\nseed = many\n"), ConfigError);
    EXPECT_THROW(parse_config("[variants]\nlist = lora:unknown-shift\n"), ConfigError);
    EXPECT_THROW(parse_config("[attack]\niterations = 0\n"), ConfigError);
}

TEST(Config, OutDirDoesNotAffectDigest)
{
    ExperimentConfig a, b;
    b.out_dir = "/elsewhere";
    EXPECT_EQ(a.digest(), b.digest());
}

TEST(Config, StageDigestsTrackOnlyUpstreamSections)
{
    ExperimentConfig a, b;
    b.attack.iterations = a.attack.iterations + 1;
    EXPECT_EQ(a.generator_digest(), b.generator_digest());
    EXPECT_EQ(a.detector_digest(), b.detector_digest());
    EXPECT_NE(a.attack_digest(), b.attack_digest());
    EXPECT_NE(a.harden_digest(), b.harden_digest());

    ExperimentConfig c;
    c.world.noise_floor *= 2.0;
    EXPECT_NE(a.generator_digest(), c.generator_digest());
    EXPECT_NE(a.attack_digest(), c.attack_digest());
}

TEST(Report, FixedFormatting)
{
    EXPECT_EQ(format_fixed4(1.0 / 3.0), "0.3333");
    EXPECT_EQ(format_fixed4(-0.00001), "0.0000");
    EXPECT_EQ(format_fixed4(47.2), "47.2000");
    EXPECT_THROW(format_fixed4(std::nan("")), std::invalid_argument);
}

TEST(Report, HeaderOnlyCsv)
{
    const CsvTable t({"a", "b"});
    EXPECT_EQ(t.str(), "a,b\n");
}

TEST(Report, QuotingAndRowLength)
{
    CsvTable t({"name", "v", "n"});
    t.add_row({std::string("x,y"), 0.5, std::int64_t{3}});
    EXPECT_EQ(t.str(), "name,v,n\n\"x,y\",0.5000,3\n");
    EXPECT_THROW(t.add_row({std::string("short")}), std::invalid_argument);
}

TEST(Report, ManifestHashesMatchIndependentDigest)
{
    const fs::path dir = scratch_dir("manifest");
    ReportWriter w(dir.string());
    w.write_text("b.txt", "hello");
    w.write_text("a/c.txt", "");
    const auto entries = w.finish();
    ASSERT_EQ(entries.size(), 2u);
    EXPECT_EQ(entries[0].path, "a/c.txt");
    // SHA-256 of the empty string and of "hello".
    EXPECT_EQ(entries[0].sha256, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(entries[1].sha256, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    EXPECT_TRUE(verify_manifest(dir.string()).empty());

    std::ofstream(dir / "b.txt") << "tampered";
    EXPECT_EQ(verify_manifest(dir.string()), std::vector<std::string>{"b.txt"});
}

TEST(Pgm, RoundTripOfQuantizedImage)
{
    const Tensor img = quantize_8bit(random_tensor({6, 5}, 3, 0.0, 1.0));
    const Tensor back = read_pgm(write_pgm(img));
    EXPECT_TRUE(back.same_bytes(img));
    EXPECT_THROW(read_pgm("P2\n1 1\n255\n0"), ParseError);
}

}  // namespace
}  // namespace dfb
