// Command-line driver for the detection benchmark.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 pipeline failure.

#include "dfb/config.hpp"
#include "dfb/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <chrono>
#include <functional>
#include <iostream>
#include <optional>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPipeline = 3;

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool build_prerequisites = false;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o)
{
    cmd->add_option("--config", o.config_path, "INI experiment configuration (defaults apply when omitted)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Override [run] seed");
    cmd->add_option("--out", o.out_dir, "Override [run] out_dir");
    cmd->add_flag("--build-prerequisites", o.build_prerequisites,
                  "Build artifacts owned by other pipelines instead of failing when they are missing");
    cmd->add_flag("-q,--quiet", o.quiet, "Suppress progress output");
}

dfb::ExperimentConfig resolve(const CommonOptions& o)
{
    dfb::ExperimentConfig c = o.config_path.empty() ? dfb::ExperimentConfig{} : dfb::load_config(o.config_path);
    if (o.seed) c.seed = *o.seed;
    if (!o.out_dir.empty()) c.out_dir = o.out_dir;
    c.validate();
    return c;
}

void print_manifest(const std::vector<dfb::ManifestEntry>& entries, const std::string& dir)
{
    std::size_t bytes = 0;
    for (const auto& e : entries) bytes += e.bytes;
    fmt::print("wrote {} files ({} bytes) to {}\n", entries.size() + 1, bytes, dir);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Deepfake detector robustness benchmark"};
    app.require_subcommand(1);
    CommonOptions opts;
    std::string pipeline;

    using Action = std::function<void(dfb::Workspace&)>;
    std::vector<std::pair<CLI::App*, Action>> commands;

    auto add = [&](const std::string& name, const std::string& help, Action action) {
        CLI::App* cmd = app.add_subcommand(name, help);
        add_common(cmd, opts);
        commands.emplace_back(cmd, std::move(action));
        return cmd;
    };

    add("gen-data", "Write the base real/fake split as PGM images plus a CSV manifest",
        [](dfb::Workspace& ws) { dfb::export_dataset(ws); });
    add("train-gen", "Train (or load) the conditional generator", [](dfb::Workspace& ws) {
        ws.allow("baseline");
        const auto& r = ws.generator_report();
        fmt::print("generator train MSE {:.5f}, val MSE {:.5f}\n", r.train_mse, r.val_mse);
    });
    add("customize", "Build every configured LoRA / full fine-tuning variant", [](dfb::Workspace& ws) {
        ws.allow("generalize");
        for (const auto& v : ws.config().variants) {
            ws.variant(v);
            fmt::print("{}: {} trainable parameters\n", v.id(), ws.variant_trainable_params(v));
        }
    });
    add("train-det", "Train both encoders and every configured detector", [](dfb::Workspace& ws) {
        ws.allow("baseline");
        ws.encoder(dfb::EncoderTier::Small);
        ws.encoder(dfb::EncoderTier::Large);
        for (const dfb::Detector* d : ws.detectors()) {
            const dfb::Prf p = dfb::evaluate(*d, ws.split().test.images);
            fmt::print("{:<18} test P {:.2f} R {:.2f} F1 {:.2f}\n", d->id(), p.precision, p.recall, p.f1);
        }
    });
    add("attack", "Train the surrogate, craft the adversarial set and report", [](dfb::Workspace& ws) {
        print_manifest(dfb::run_pipeline("attack", ws), ws.config().out_dir + "/reports/attack");
    });
    add("harden", "Adversarially fine-tune the detectors, re-attack and report", [](dfb::Workspace& ws) {
        print_manifest(dfb::run_pipeline("harden", ws), ws.config().out_dir + "/reports/harden");
    });
    CLI::App* report = add("report", "Run one pipeline and write its report", [&pipeline](dfb::Workspace& ws) {
        print_manifest(dfb::run_pipeline(pipeline, ws), ws.config().out_dir + "/reports/" + pipeline);
    });
    std::string names;
    for (const auto& n : dfb::pipeline_names()) names += (names.empty() ? "" : ", ") + n;
    report->add_option("--pipeline", pipeline, "One of: " + names)
        ->required()
        ->check(CLI::IsMember(dfb::pipeline_names()));

    CLI::App* show = app.add_subcommand("show-config", "Print the resolved configuration as INI");
    add_common(show, opts);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        const dfb::ExperimentConfig config = resolve(opts);
        if (show->parsed()) {
            std::cout << dfb::to_ini(config);
            return 0;
        }
        dfb::Workspace ws(config, opts.build_prerequisites, opts.quiet ? nullptr : &std::cerr);
        const auto t0 = std::chrono::steady_clock::now();
        for (auto& [cmd, action] : commands) {
            if (cmd->parsed()) action(ws);
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        ws.log(fmt::format("finished in {:.1f}s", secs));
        return 0;
    } catch (const dfb::ConfigError& e) {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        fmt::print(stderr, "pipeline failed: {}\n", e.what());
        return kExitPipeline;
    }
}
