#include "dfb/config.hpp"

#include "dfb/digest.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace dfb {

namespace {

std::string fmt_double(double v)
{
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

double to_double(const std::string& key, const std::string& v)
{
    double out = 0.0;
    const std::string t = trim(v);
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
        throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v)
{
    std::uint64_t out = 0;
    const std::string t = trim(v);
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
    if (t.empty() || ec != std::errc() || end != t.data() + t.size()) {
        throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
    return out;
}

std::vector<std::string> to_list(const std::string& v)
{
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string join(const std::vector<std::string>& items)
{
    std::string out;
    for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
    return out;
}

struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
};

std::string format_value(double v)
{
    return fmt_double(v);
}
std::string format_value(std::uint64_t v)
{
    return std::to_string(v);
}
std::string format_value(int v)
{
    return std::to_string(v);
}
std::string format_value(const std::string& v)
{
    return v;
}
std::string format_value(const std::vector<std::string>& v)
{
    return join(v);
}

void parse_value(const std::string& key, const std::string& v, double& out)
{
    out = to_double(key, v);
}
void parse_value(const std::string& key, const std::string& v, std::uint64_t& out)
{
    out = to_u64(key, v);
}
void parse_value(const std::string& key, const std::string& v, int& out)
{
    const std::uint64_t x = to_u64(key, v);
    if (x > 64) throw ConfigError("config: " + key + " is out of range: " + v);
    out = static_cast<int>(x);
}
void parse_value(const std::string&, const std::string& v, std::string& out)
{
    out = trim(v);
}
void parse_value(const std::string&, const std::string& v, std::vector<std::string>& out)
{
    out = to_list(v);
}

// `ref` is a generic accessor usable on both const and mutable configs.
template <typename Ref>
Field field(std::string section, std::string key, Ref ref)
{
    return {std::move(section), std::move(key), [ref](const ExperimentConfig& c) { return format_value(ref(c)); },
            [ref](ExperimentConfig& c, const std::string& k, const std::string& v) { parse_value(k, v, ref(c)); }};
}

#define DFB_FIELD(section, key, expr) field(section, key, [](auto& c) -> auto& { return expr; })

const std::vector<Field>& fields()
{
    using C = ExperimentConfig;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(DFB_FIELD("run", "seed", c.seed));
        f.push_back(DFB_FIELD("run", "out_dir", c.out_dir));

        f.push_back(DFB_FIELD("world", "image_size", c.world.image_size));
        f.push_back(DFB_FIELD("world", "noise_floor", c.world.noise_floor));
        f.push_back(DFB_FIELD("world", "noise_spread", c.world.noise_spread));
        f.push_back(DFB_FIELD("world", "brightness_offset", c.world.brightness_offset));
        f.push_back(DFB_FIELD("world", "contrast_gain", c.world.contrast_gain));
        f.push_back(DFB_FIELD("world", "edge_width_gain", c.world.edge_width_gain));
        f.push_back(DFB_FIELD("world", "texture_amp", c.world.texture_amp));
        f.push_back(DFB_FIELD("world", "detail_amp", c.world.detail_amp));
        f.push_back(DFB_FIELD("world", "highlight_gain", c.world.highlight_gain));
        f.push_back(DFB_FIELD("world", "gradient_gain", c.world.gradient_gain));

        f.push_back(DFB_FIELD("data", "n_per_class", c.n_per_class));

        f.push_back(DFB_FIELD("generator", "enc_channels", c.generator_arch.enc_channels));
        f.push_back(DFB_FIELD("generator", "bottleneck_channels", c.generator_arch.bottleneck_channels));
        f.push_back(DFB_FIELD("generator", "pairs", c.generator_pairs));
        f.push_back(DFB_FIELD("generator", "val_pairs", c.generator_val_pairs));
        f.push_back(DFB_FIELD("generator", "epochs", c.generator_train.epochs));
        f.push_back(DFB_FIELD("generator", "batch_size", c.generator_train.batch_size));
        f.push_back(DFB_FIELD("generator", "learning_rate", c.generator_train.learning_rate));
        f.push_back(DFB_FIELD("generator", "val_threshold", c.generator_train.val_threshold));

        f.push_back(DFB_FIELD("encoder", "small_images", c.encoder_small.images));
        f.push_back(DFB_FIELD("encoder", "large_images", c.encoder_large.images));
        f.push_back(DFB_FIELD("encoder", "small_epochs", c.encoder_small.epochs));
        f.push_back(DFB_FIELD("encoder", "large_epochs", c.encoder_large.epochs));
        f.push_back(DFB_FIELD("encoder", "batch_size", c.encoder_small.batch_size));
        f.push_back(DFB_FIELD("encoder", "learning_rate", c.encoder_small.learning_rate));

        f.push_back(DFB_FIELD("detectors", "kinds", c.detector_kinds));
        f.push_back(DFB_FIELD("detectors", "ensemble", c.ensemble));
        f.push_back(DFB_FIELD("detectors", "lr_epochs", c.lr_epochs));
        f.push_back(DFB_FIELD("detectors", "cnn_epochs", c.cnn_epochs));
        f.push_back(DFB_FIELD("detectors", "embedding_epochs", c.embedding_epochs));

        f.push_back({"variants", "list",
                     [](const C& c) {
                         std::vector<std::string> ids;
                         for (const auto& v : c.variants) ids.push_back(v.id());
                         return join(ids);
                     },
                     [](C& c, const std::string&, const std::string& v) {
                         c.variants.clear();
                         for (const auto& item : to_list(v)) c.variants.push_back(VariantSpec::parse(item));
                     }});
        f.push_back(DFB_FIELD("variants", "lora_rank", c.lora_rank));
        f.push_back(DFB_FIELD("variants", "lora_alpha", c.lora_alpha));
        f.push_back(DFB_FIELD("variants", "steps", c.customize.steps));
        f.push_back(DFB_FIELD("variants", "batch_size", c.customize.batch_size));
        f.push_back(DFB_FIELD("variants", "learning_rate", c.customize.learning_rate));
        f.push_back(DFB_FIELD("variants", "pairs", c.customize_pairs));

        f.push_back(DFB_FIELD("surrogate", "per_class", c.surrogate_per_class));
        f.push_back(DFB_FIELD("surrogate", "epochs", c.surrogate.epochs));
        f.push_back(DFB_FIELD("surrogate", "batch_size", c.surrogate.batch_size));
        f.push_back(DFB_FIELD("surrogate", "learning_rate", c.surrogate.learning_rate));
        f.push_back(DFB_FIELD("surrogate", "test_fraction", c.surrogate.test_fraction));

        f.push_back(DFB_FIELD("attack", "instances", c.attack_instances));
        f.push_back(DFB_FIELD("attack", "gamma", c.attack.gamma));
        f.push_back(DFB_FIELD("attack", "delta", c.attack.delta));
        f.push_back(DFB_FIELD("attack", "iterations", c.attack.iterations));
        f.push_back({"attack", "optimizer", [](const C& c) { return to_string(c.attack.optimizer.kind); },
                     [](C& c, const std::string& k, const std::string& v) {
                         try {
                             c.attack.optimizer.kind = parse_optimizer_kind(trim(v));
                         } catch (const std::invalid_argument& e) {
                             throw ConfigError("config: " + k + ": " + e.what());
                         }
                     }});
        f.push_back(DFB_FIELD("attack", "learning_rate", c.attack.optimizer.learning_rate));
        f.push_back(DFB_FIELD("attack", "momentum", c.attack.optimizer.momentum));

        f.push_back(DFB_FIELD("harden", "instances", c.harden_instances));
        f.push_back(DFB_FIELD("harden", "epochs", c.harden_epochs));
        f.push_back(DFB_FIELD("harden", "lr_scale", c.harden_lr_scale));

        f.push_back(DFB_FIELD("kid", "degree", c.kid.degree));
        f.push_back(DFB_FIELD("kid", "offset", c.kid.offset));
        f.push_back(DFB_FIELD("kid", "subset_size", c.kid.subset_size));
        f.push_back(DFB_FIELD("kid", "num_subsets", c.kid.num_subsets));
        return f;
    }();
    return table;
}

#undef DFB_FIELD

std::string section_text(const ExperimentConfig& c, std::initializer_list<std::string_view> sections)
{
    std::string out;
    for (const auto& f : fields()) {
        if (f.section == "run" && f.key == "out_dir") continue;
        if (std::find(sections.begin(), sections.end(), f.section) == sections.end()) continue;
        out += f.section + "." + f.key + " = " + f.get(c) + "\n";
    }
    return out;
}

std::string digest_of(std::string_view tag, const std::string& text)
{
    Sha256 h;
    h.update(tag);
    h.update("\n");
    h.update(text);
    return h.finish_hex();
}

}  // namespace

std::string VariantSpec::id() const
{
    return (kind == VariantKind::Lora ? "lora:" : "fm:") + shift;
}

VariantSpec VariantSpec::parse(const std::string& text)
{
    const auto colon = text.find(':');
    VariantSpec v;
    const std::string kind = colon == std::string::npos ? "" : text.substr(0, colon);
    if (kind == "lora") {
        v.kind = VariantKind::Lora;
    } else if (kind == "fm") {
        v.kind = VariantKind::Full;
    } else {
        throw ConfigError("variant '" + text + "' must look like lora:<shift> or fm:<shift>");
    }
    v.shift = text.substr(colon + 1);
    const auto& names = shift_names();
    if (std::find(names.begin(), names.end(), v.shift) == names.end()) {
        std::string valid;
        for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
        throw ConfigError("variant '" + text + "': unknown shift '" + v.shift + "' (valid: " + valid + ")");
    }
    return v;
}

WorldConfig ExperimentConfig::default_world()
{
    WorldConfig w;
    w.image_size = 32;
    return w;
}

std::vector<VariantSpec> ExperimentConfig::default_variants()
{
    std::vector<VariantSpec> out;
    for (VariantKind k : {VariantKind::Lora, VariantKind::Full})
        for (const auto& s : shift_names()) out.push_back({k, s});
    return out;
}

void ExperimentConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("config: " + what);
    };
    try {
        world.validate();
        attack.validate();
        kid.validate();
        attack.optimizer.validate();
        for (const auto& k : detector_kinds) DetectorSpec::parse(k);
        for (const auto& k : ensemble) DetectorSpec::parse(k);
        GeneratorArch::parse(generator_arch.descriptor());
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    require(world.image_size >= 32 && world.image_size % 4 == 0, "world.image_size must be a multiple of 4, >= 32");
    require(generator_arch.image_size == world.image_size, "generator image size must equal world.image_size");
    require(n_per_class >= 10, "data.n_per_class must be >= 10");
    require(generator_pairs > 0 && generator_val_pairs > 0, "generator.pairs and generator.val_pairs must be > 0");
    require(generator_train.batch_size > 0 && customize.batch_size > 0 && surrogate.batch_size > 0,
            "batch sizes must be > 0");
    require(encoder_small.images > 0 && encoder_large.images > 0, "encoder image counts must be > 0");
    require(!detector_kinds.empty(), "detectors.kinds must name at least one detector");
    std::set<std::string> kinds;
    for (const auto& k : detector_kinds) {
        require(kinds.insert(DetectorSpec::parse(k).id()).second, "detectors.kinds lists '" + k + "' twice");
    }
    require(ensemble.size() >= 2, "detectors.ensemble needs at least two members");
    for (const auto& k : ensemble) {
        require(kinds.count(DetectorSpec::parse(k).id()) == 1,
                "detectors.ensemble member '" + k + "' is not in detectors.kinds");
    }
    std::set<std::string> ids;
    for (const auto& v : variants) require(ids.insert(v.id()).second, "variants.list names '" + v.id() + "' twice");
    require(lora_rank >= 1, "variants.lora_rank must be >= 1");
    require(lora_alpha >= 0.0, "variants.lora_alpha must be >= 0");
    require(customize_pairs > 0, "variants.pairs must be > 0");
    require(surrogate_per_class >= 10, "surrogate.per_class must be >= 10");
    require(surrogate.test_fraction > 0.0 && surrogate.test_fraction < 1.0, "surrogate.test_fraction must be in (0,1)");
    require(attack_instances > 0, "attack.instances must be > 0");
    require(harden_instances >= 10, "harden.instances must be >= 10");
    require(harden_lr_scale > 0.0, "harden.lr_scale must be > 0");
}

std::string ExperimentConfig::canonical_text() const
{
    return section_text(*this, {"run", "world", "data", "generator", "encoder", "detectors", "variants", "surrogate",
                                "attack", "harden", "kid"});
}

std::string ExperimentConfig::digest() const
{
    return digest_of("config", canonical_text());
}

std::string ExperimentConfig::generator_digest() const
{
    return digest_of("generator", section_text(*this, {"run", "world", "generator"}));
}

std::string ExperimentConfig::encoder_digest(EncoderTier tier) const
{
    return digest_of("encoder-" + to_string(tier), section_text(*this, {"run", "world", "encoder"}));
}

std::string ExperimentConfig::detector_digest() const
{
    return digest_of("detectors", generator_digest() + encoder_digest(EncoderTier::Small)
                                      + encoder_digest(EncoderTier::Large) + section_text(*this, {"data", "detectors"}));
}

std::string ExperimentConfig::variant_digest(const VariantSpec& v) const
{
    std::string text = section_text(*this, {"variants"});
    text += "variant = " + v.id() + "\n";
    return digest_of("variant", generator_digest() + text);
}

std::string ExperimentConfig::attack_digest() const
{
    return digest_of("attack", detector_digest() + section_text(*this, {"surrogate", "attack"}));
}

std::string ExperimentConfig::harden_digest() const
{
    return digest_of("harden", attack_digest() + section_text(*this, {"harden"}));
}

std::string to_ini(const ExperimentConfig& config)
{
    std::string out, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            out += (out.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(config) + "\n";
    }
    return out;
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.section + "." + f.key);
    return out;
}

ExperimentConfig parse_config(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(fmt::format("config: line {}: {}", e.line(), e.message()));
    }
    ExperimentConfig c;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config: key '" + section + "' must live inside a [section]");
        for (const auto& [key, value] : body) {
            const std::string name = section + "." + key;
            const auto& table = fields();
            auto it = std::find_if(table.begin(), table.end(),
                                   [&](const Field& f) { return f.section == section && f.key == key; });
            if (it == table.end()) throw ConfigError("config: unknown key '" + name + "'");
            it->set(c, name, value.get_value<std::string>());
        }
    }
    c.generator_arch.image_size = c.world.image_size;
    c.encoder_large.batch_size = c.encoder_small.batch_size;
    c.encoder_large.learning_rate = c.encoder_small.learning_rate;
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot read '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

}  // namespace dfb
