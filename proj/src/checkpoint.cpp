#include "dfb/checkpoint.hpp"

#include "dfb/digest.hpp"

#include <fmt/format.h>

#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dfb {

namespace {

constexpr std::string_view kMagic = "DFBENCH1";
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::size_t kDigestBytes = 32;
// Guards against absurd allocations from corrupt length fields.
constexpr std::uint64_t kMaxCount = std::uint64_t{1} << 32;

class Writer {
public:
    void bytes(std::string_view b) { out_.append(b); }
    void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v)
    {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }
    std::string& out() { return out_; }

private:
    std::string out_;
};

class Reader {
public:
    explicit Reader(std::string_view b) : b_(b) {}

    std::size_t pos() const { return pos_; }
    void need(std::size_t n, const char* what) const
    {
        if (b_.size() - pos_ < n) throw ParseError(fmt::format("checkpoint: truncated {}", what), pos_);
    }
    std::string_view bytes(std::size_t n, const char* what)
    {
        need(n, what);
        auto v = b_.substr(pos_, n);
        pos_ += n;
        return v;
    }
    std::uint8_t u8(const char* what)
    {
        need(1, what);
        return static_cast<std::uint8_t>(b_[pos_++]);
    }
    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(b_[pos_ + i])} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what)
    {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(b_[pos_ + i])} << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string str(const char* what)
    {
        const std::size_t at = pos_;
        const std::uint32_t n = u32(what);
        if (n > b_.size() - pos_) throw ParseError(fmt::format("checkpoint: {} length {} exceeds file", what, n), at);
        return std::string(bytes(n, what));
    }

private:
    std::string_view b_;
    std::size_t pos_ = 0;
};

std::string format_double(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

double parse_double(const std::string& s, const std::string& key)
{
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw CheckpointMismatchError("checkpoint: metadata '" + key + "' is not a number: '" + s + "'");
    }
    return v;
}

std::size_t parse_size(const std::string& s, const std::string& key)
{
    std::size_t v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw CheckpointMismatchError("checkpoint: metadata '" + key + "' is not an integer: '" + s + "'");
    }
    return v;
}

void expect_kind(const Checkpoint& ckpt, const std::string& kind)
{
    if (ckpt.kind() != kind) {
        throw CheckpointMismatchError("checkpoint: expected a " + kind + " checkpoint, found arch '" + ckpt.arch + "'");
    }
}

void expect_encoder(const Checkpoint& ckpt, const EncoderPtr& encoder)
{
    if (!encoder) throw CheckpointMismatchError("checkpoint: '" + ckpt.arch + "' requires its encoder");
    if (encoder->checksum() != ckpt.meta("encoder_checksum")) {
        throw CheckpointMismatchError("checkpoint: '" + ckpt.arch + "' was trained on a different " + encoder->id()
                                      + " encoder");
    }
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::string Checkpoint::kind() const
{
    return arch.substr(0, arch.find(':'));
}

const std::string& Checkpoint::meta(const std::string& key) const
{
    for (const auto& [k, v] : metadata)
        if (k == key) return v;
    throw CheckpointMismatchError("checkpoint '" + arch + "' has no metadata '" + key + "'");
}

std::string serialize_checkpoint(const Checkpoint& ckpt)
{
    Writer w;
    w.bytes(kMagic);
    w.u32(kCheckpointVersion);
    w.str(ckpt.arch);
    w.u64(ckpt.seed);
    w.str(ckpt.config_digest);
    w.u32(static_cast<std::uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
        w.str(k);
        w.str(v);
    }
    const auto& entries = ckpt.tensors.entries();
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        w.str(e.name);
        w.u8(kDtypeF64);
        w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
        for (std::size_t d : e.tensor.shape()) w.u64(d);
        for (double v : e.tensor.data()) w.f64(v);
    }
    Sha256 h;
    h.update(w.out());
    const auto digest = h.finish();
    w.bytes(std::string_view(reinterpret_cast<const char*>(digest.data()), digest.size()));
    return std::move(w.out());
}

Checkpoint parse_checkpoint(std::string_view bytes)
{
    Reader r(bytes);
    if (r.bytes(std::min(bytes.size(), kMagic.size()), "magic") != kMagic) {
        throw ParseError("checkpoint: bad magic, expected DFBENCH1", 0);
    }
    const std::size_t version_at = r.pos();
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion) {
        throw ParseError(fmt::format("checkpoint: unsupported version {}", version), version_at);
    }
    if (bytes.size() < kMagic.size() + 4 + kDigestBytes) throw ParseError("checkpoint: truncated file", bytes.size());

    Checkpoint ckpt;
    ckpt.arch = r.str("arch descriptor");
    ckpt.seed = r.u64("seed");
    ckpt.config_digest = r.str("config digest");
    const std::size_t meta_at = r.pos();
    const std::uint32_t n_meta = r.u32("metadata count");
    if (n_meta > bytes.size()) throw ParseError("checkpoint: implausible metadata count", meta_at);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = r.str("metadata key");
        std::string v = r.str("metadata value");
        ckpt.metadata.emplace_back(std::move(k), std::move(v));
    }
    const std::size_t count_at = r.pos();
    const std::uint32_t n_tensors = r.u32("tensor count");
    if (n_tensors > bytes.size()) throw ParseError("checkpoint: implausible tensor count", count_at);
    for (std::uint32_t t = 0; t < n_tensors; ++t) {
        std::string name = r.str("tensor name");
        const std::size_t dtype_at = r.pos();
        if (r.u8("dtype") != kDtypeF64) throw ParseError("checkpoint: tensor '" + name + "' has unknown dtype", dtype_at);
        const std::size_t rank_at = r.pos();
        const std::uint32_t rank = r.u32("rank");
        if (rank == 0 || rank > 8) throw ParseError("checkpoint: tensor '" + name + "' has bad rank", rank_at);
        Shape shape(rank);
        std::uint64_t numel = 1;
        for (auto& d : shape) {
            const std::size_t dim_at = r.pos();
            const std::uint64_t v = r.u64("dimension");
            if (v == 0 || v > kMaxCount || numel * v > kMaxCount) {
                throw ParseError("checkpoint: tensor '" + name + "' has bad dimension", dim_at);
            }
            numel *= v;
            d = static_cast<std::size_t>(v);
        }
        const std::size_t payload_at = r.pos();
        if (numel * 8 > bytes.size() - payload_at) {
            throw ParseError("checkpoint: truncated payload of tensor '" + name + "'", bytes.size());
        }
        std::vector<double> data(numel);
        for (auto& v : data) v = std::bit_cast<double>(r.u64("payload"));
        ckpt.tensors.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    const std::size_t body_end = r.pos();
    const std::string_view stored = r.bytes(kDigestBytes, "checksum");
    if (r.pos() != bytes.size()) throw ParseError("checkpoint: trailing bytes after checksum", r.pos());
    Sha256 h;
    h.update(bytes.substr(0, body_end));
    const auto actual = h.finish();
    if (std::memcmp(actual.data(), stored.data(), kDigestBytes) != 0) {
        throw ParseError("checkpoint: checksum mismatch, file is corrupt", body_end);
    }
    return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path)
{
    const std::string bytes = serialize_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path, const std::string& expected_kind)
{
    Checkpoint ckpt;
    try {
        ckpt = parse_checkpoint(read_file(path));
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what(), e.offset());
    }
    if (!expected_kind.empty()) expect_kind(ckpt, expected_kind);
    return ckpt;
}

std::string checkpoint_file_digest(const std::string& path)
{
    return sha256_hex(read_file(path));
}

Checkpoint to_checkpoint(const ConditionalGenerator& g, const std::string& config_digest)
{
    Checkpoint c;
    c.arch = g.arch.descriptor();
    c.seed = g.seed;
    c.config_digest = config_digest;
    c.tensors = g.params.detached();
    return c;
}

Checkpoint to_checkpoint(const FrozenEncoder& enc, const std::string& config_digest)
{
    Checkpoint c;
    c.arch = enc.arch.descriptor();
    c.seed = enc.seed;
    c.config_digest = config_digest;
    c.metadata = {{"tier", enc.id()}, {"training_images", std::to_string(enc.training_images)}};
    c.tensors = enc.params.detached();
    return c;
}

Checkpoint to_checkpoint(const Detector& d, std::uint64_t seed, const std::string& config_digest)
{
    Checkpoint c;
    c.arch = d.descriptor();
    c.seed = seed;
    c.config_digest = config_digest;
    c.metadata = {{"threshold", format_double(d.threshold)}, {"log_epsilon", format_double(d.dct.log_epsilon)}};
    if (d.encoder) c.metadata.emplace_back("encoder_checksum", d.encoder->checksum());
    c.tensors = d.params.detached();
    return c;
}

Checkpoint to_checkpoint(const SurrogateClassifier& m, std::uint64_t seed, const std::string& config_digest)
{
    Checkpoint c;
    c.arch = m.descriptor();
    c.seed = seed;
    c.config_digest = config_digest;
    c.metadata = {{"encoder_checksum", m.encoder->checksum()}};
    c.tensors = m.params.detached();
    return c;
}

Checkpoint to_checkpoint(const LowRankAdapter& a, std::uint64_t seed, const std::string& config_digest)
{
    Checkpoint c;
    std::string targets;
    for (const auto& f : a.factors) targets += (targets.empty() ? "" : ",") + f.target;
    c.arch = fmt::format("adapter:v1:rank={}:targets={}", a.rank, targets);
    c.seed = seed;
    c.config_digest = config_digest;
    c.tensors = a.as_params();
    return c;
}

ConditionalGenerator generator_from_checkpoint(const Checkpoint& ckpt)
{
    expect_kind(ckpt, "generator");
    ConditionalGenerator g = ConditionalGenerator::initialize(GeneratorArch::parse(ckpt.arch), ckpt.seed);
    if (g.params.entries().size() != ckpt.tensors.entries().size()) {
        throw CheckpointMismatchError("checkpoint: generator tensor set does not match '" + ckpt.arch + "'");
    }
    for (const auto& e : ckpt.tensors.entries()) {
        if (!g.params.contains(e.name) || g.params.at(e.name).shape() != e.tensor.shape()) {
            throw CheckpointMismatchError("checkpoint: generator tensor '" + e.name + "' does not match '" + ckpt.arch
                                          + "'");
        }
    }
    g.params = ckpt.tensors.detached();
    return g;
}

FrozenEncoder encoder_from_checkpoint(const Checkpoint& ckpt)
{
    expect_kind(ckpt, "encoder");
    FrozenEncoder enc;
    enc.arch = EncoderArch::parse(ckpt.arch);
    enc.tier = parse_encoder_tier(ckpt.meta("tier"));
    enc.seed = ckpt.seed;
    enc.training_images = parse_size(ckpt.meta("training_images"), "training_images");
    for (int b = 0; b < 3; ++b) {
        const std::string name = "block" + std::to_string(b + 1) + ".w";
        if (!ckpt.tensors.contains(name) || ckpt.tensors.at(name).dim(0) != enc.arch.widths[b]) {
            throw CheckpointMismatchError("checkpoint: encoder tensor '" + name + "' does not match '" + ckpt.arch
                                          + "'");
        }
    }
    enc.params = ckpt.tensors.detached();
    return enc;
}

Detector detector_from_checkpoint(const Checkpoint& ckpt, EncoderPtr encoder)
{
    expect_kind(ckpt, "detector");
    char kind[64] = {};
    std::size_t size = 0;
    if (std::sscanf(ckpt.arch.c_str(), "detector:v1:kind=%63[^:]:size=%zu", kind, &size) != 2) {
        throw CheckpointMismatchError("checkpoint: malformed detector descriptor '" + ckpt.arch + "'");
    }
    Detector d;
    d.spec = DetectorSpec::parse(kind);
    d.image_size = size;
    d.threshold = parse_double(ckpt.meta("threshold"), "threshold");
    d.dct.log_epsilon = parse_double(ckpt.meta("log_epsilon"), "log_epsilon");
    if (d.spec.kind == DetectorKind::Embedding) {
        expect_encoder(ckpt, encoder);
        if (encoder->id() != d.spec.encoder_id) {
            throw CheckpointMismatchError("checkpoint: '" + ckpt.arch + "' needs the " + d.spec.encoder_id
                                          + " encoder, got " + encoder->id());
        }
        d.encoder = std::move(encoder);
    }
    d.params = ckpt.tensors.detached();
    if (d.descriptor() != ckpt.arch) {
        throw CheckpointMismatchError("checkpoint: detector descriptor '" + ckpt.arch + "' does not round-trip");
    }
    return d;
}

SurrogateClassifier surrogate_from_checkpoint(const Checkpoint& ckpt, EncoderPtr encoder)
{
    expect_kind(ckpt, "surrogate");
    expect_encoder(ckpt, encoder);
    SurrogateClassifier m;
    m.encoder = std::move(encoder);
    m.params = ckpt.tensors.detached();
    if (m.descriptor() != ckpt.arch) {
        throw CheckpointMismatchError("checkpoint: surrogate '" + ckpt.arch + "' does not match encoder "
                                      + m.encoder->id());
    }
    return m;
}

LowRankAdapter adapter_from_checkpoint(const Checkpoint& ckpt)
{
    expect_kind(ckpt, "adapter");
    std::size_t rank = 0;
    if (std::sscanf(ckpt.arch.c_str(), "adapter:v1:rank=%zu:", &rank) != 1) {
        throw CheckpointMismatchError("checkpoint: malformed adapter descriptor '" + ckpt.arch + "'");
    }
    LowRankAdapter a = LowRankAdapter::from_params(ckpt.tensors, rank);
    if (to_checkpoint(a, ckpt.seed, ckpt.config_digest).arch != ckpt.arch) {
        throw CheckpointMismatchError("checkpoint: adapter tensors do not match '" + ckpt.arch + "'");
    }
    return a;
}

}  // namespace dfb
