// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exit status: 0 when every criterion was evaluated (1 with --strict if any
// failed), 3 when the harness itself could not run.

#include "dfb/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/core.h>
#include <fmt/ranges.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Verdict {
    int id;
    bool pass;
    std::string text;
};

std::vector<Verdict> verdicts;

void record(int id, bool pass, const std::string& text)
{
    verdicts.push_back({id, pass, text});
    std::cout << fmt::format("[{}] criterion {:>2}: {}", pass ? "PASS" : "FAIL", id, text) << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

// Runs a subset of the unit tests in a child process.
void unit_criterion(int id, const std::string& name, const std::string& tests_bin, const std::string& filter,
                    double limit_s)
{
    const auto t0 = std::chrono::steady_clock::now();
    const std::string cmd = fmt::format("\"{}\" --gtest_filter='{}' --gtest_brief=1 > /dev/null 2>&1", tests_bin, filter);
    const int rc = std::system(cmd.c_str());
    const double s = seconds_since(t0);
    record(id, rc == 0 && s < limit_s,
           fmt::format("{}: tests {} ({}), {:.1f} s (< {:.0f} s)", name, rc == 0 ? "passed" : "failed", filter, s,
                       limit_s));
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// CSV files under a/reports/<p> that are missing or differ under b.
std::vector<std::string> csv_differences(const fs::path& a, const fs::path& b, const std::string& pipeline)
{
    std::vector<std::string> bad;
    const fs::path ra = a / "reports" / pipeline, rb = b / "reports" / pipeline;
    std::size_t n = 0;
    for (const auto& e : fs::recursive_directory_iterator(ra)) {
        if (e.path().extension() != ".csv") continue;
        ++n;
        const fs::path rel = fs::relative(e.path(), ra);
        if (!fs::exists(rb / rel) || slurp(e.path()) != slurp(rb / rel)) bad.push_back(pipeline + "/" + rel.string());
    }
    if (n == 0) bad.push_back(pipeline + "/<no csv>");
    return bad;
}

struct SeedRun {
    std::uint64_t seed = 0;
    dfb::BaselineResults baseline;
    dfb::GeneralizeResults generalize;
    dfb::EnhanceResults enhance;
    dfb::AttackResults attack;
    std::optional<dfb::HardenResults> harden;
    double baseline_cpu_s = -1.0;
    std::size_t attack_instances = 0;
};

const std::vector<std::string> kStages{"baseline", "generalize", "enhance", "attack"};

SeedRun run_seed(const fs::path& dir, std::uint64_t seed, bool with_harden, std::ostream* log)
{
    dfb::ExperimentConfig config;
    config.seed = seed;
    config.out_dir = dir.string();
    dfb::Workspace ws(config, true, log);
    SeedRun r;
    r.seed = seed;

    const bool fresh = !fs::exists(dir / "checkpoints" / "generator.ckpt");
    const double c0 = cpu_seconds();
    dfb::run_pipeline("baseline", ws);
    if (fresh) r.baseline_cpu_s = cpu_seconds() - c0;
    for (std::size_t i = 1; i < kStages.size(); ++i) dfb::run_pipeline(kStages[i], ws);
    if (with_harden) dfb::run_pipeline("harden", ws);

    r.baseline = dfb::compute_baseline(ws);
    r.generalize = dfb::compute_generalize(ws);
    r.enhance = dfb::compute_enhance(ws);
    r.attack = dfb::compute_attack(ws);
    r.attack_instances = ws.attack_set().instances.size();
    if (with_harden) r.harden = dfb::compute_harden(ws);
    return r;
}

const dfb::RecallShift& shift_of(const std::vector<dfb::RecallShift>& v, const std::string& detector)
{
    for (const auto& s : v)
        if (s.detector == detector) return s;
    throw std::runtime_error("no recall shift for " + detector);
}

void judge_models(const std::vector<SeedRun>& runs)
{
    const SeedRun& first = runs.front();

    {
        double worst = 100.0;
        std::string worst_id;
        for (const auto& d : first.baseline.detectors)
            if (d.test.f1 < worst) worst = d.test.f1, worst_id = d.detector;
        const bool timed = first.baseline_cpu_s >= 0.0;
        const bool ok = worst >= 90.0 && timed && first.baseline_cpu_s < 900.0;
        record(4, ok,
               fmt::format("baseline detectability: min held-out F1 {:.2f} ({}) (>= 90), baseline CPU {} (< 900 s)",
                           worst, worst_id, timed ? fmt::format("{:.0f} s", first.baseline_cpu_s) : "not measured"));
    }

    {
        std::map<std::string, std::vector<double>> avg;
        std::size_t min_variants = SIZE_MAX, cnn_wins = 0;
        for (const auto& r : runs) {
            min_variants = std::min(min_variants, r.generalize.variants.size());
            for (const auto& [k, v] : r.generalize.average_delta_r) avg[k].push_back(v);
            if (r.generalize.average_delta_r.at("cnn") >= r.generalize.average_delta_r.at("dct-lr")) ++cnn_wins;
        }
        bool positive = true;
        std::string parts;
        for (const auto& [k, v] : avg) {
            positive = positive && mean(v) > 0.0;
            parts += fmt::format(" {}={:.2f}", k, mean(v));
        }
        record(5, min_variants >= 8 && positive && cnn_wins >= 2,
               fmt::format("generalization: {} variants; seed-averaged avg dR{} (all > 0); cnn >= dct in {}/{} seeds "
                           "(>= 2)",
                           min_variants, parts, cnn_wins, runs.size()));
    }

    {
        const std::size_t nv = first.enhance.dct.size();
        std::size_t reduced = 0;
        for (std::size_t i = 0; i < nv; ++i) {
            std::vector<double> d, r;
            for (const auto& run : runs) d.push_back(run.enhance.dct[i].delta_r), r.push_back(run.enhance.residual[i].delta_r);
            if (mean(r) < mean(d)) ++reduced;
        }
        record(6, nv > 0 && 2 * reduced >= nv,
               fmt::format("content-agnostic enhancement: residual reduces seed-averaged dR on {}/{} variants (>= half)",
                           reduced, nv));
    }

    {
        std::size_t violations = 0;
        std::vector<double> dct, ens;
        for (const auto& r : runs) {
            for (const auto& row : r.enhance.ensemble) violations += row.violations;
            violations += r.enhance.violations;
            dct.push_back(r.enhance.dct_f1_custom);
            ens.push_back(r.enhance.ensemble_f1_custom);
        }
        record(7, violations == 0 && mean(ens) >= mean(dct),
               fmt::format("ensemble law: {} inclusion violations (== 0); seed-averaged F1 on variants ensemble {:.2f} "
                           ">= dct {:.2f}",
                           violations, mean(ens), mean(dct)));
    }

    {
        std::vector<double> dr, gap, ratio;
        std::size_t violations = 0, min_instances = SIZE_MAX;
        for (const auto& r : runs) {
            dr.push_back(shift_of(r.attack.shifts, "dct-lr").delta_r);
            gap.push_back(std::abs(r.attack.semantic_adv - r.attack.semantic_clean));
            ratio.push_back(r.attack.kid_fake.value / r.attack.kid_baseline.value);
            violations += r.attack.frozen_violations + r.attack.no_noise_violations;
            min_instances = std::min(min_instances, r.attack_instances);
        }
        const bool ok = min_instances >= 500 && mean(dr) >= 30.0 && mean(gap) <= 0.02 && mean(ratio) < 3.0 &&
                        violations == 0;
        record(8, ok,
               fmt::format("attack efficacy: {} instances; seed-averaged dct dR {:.2f} (>= 30), semantic gap {:.4f} "
                           "(<= 0.02), KID ratio {:.2f} (< 3); invariant violations {} (== 0)",
                           min_instances, mean(dr), mean(gap), mean(ratio), violations));
    }

    {
        std::size_t wins = 0;
        std::string parts;
        for (const auto& r : runs) {
            double fake = 0.0, adv = 0.0;
            for (const auto& s : r.attack.spectra) {
                if (s.name == "fake") fake = s.distance_to_real;
                if (s.name == "adversarial") adv = s.distance_to_real;
            }
            if (adv < fake) ++wins;
            parts += fmt::format(" seed{}:{:.2f}<{:.2f}", r.seed, adv, fake);
        }
        record(9, wins == runs.size() && runs.size() >= 3,
               fmt::format("frequency mimicry: adversarial closer to real in {}/{} seeds (all of >= 3);{}", wins,
                           runs.size(), parts));
    }

    {
        std::vector<double> small, large;
        for (const auto& r : runs) {
            small.push_back(shift_of(r.attack.shifts, "embedding-small").delta_r);
            large.push_back(shift_of(r.attack.shifts, "embedding-large").delta_r);
        }
        record(10, mean(large) <= mean(small),
               fmt::format("stronger-encoder resilience: seed-averaged attack dR large {:.2f} <= small {:.2f}",
                           mean(large), mean(small)));
    }

    {
        if (!first.harden) {
            record(11, false, "adversarial training: harden pipeline did not run");
        } else {
            bool ok = !first.harden->rows.empty();
            std::string parts;
            for (const auto& h : first.harden->rows) {
                const bool row_ok = h.delta_r_after <= 0.5 * h.delta_r_before && h.f1_before - h.f1_after <= 10.0;
                ok = ok && row_ok;
                parts += fmt::format(" {}: dR {:.2f}->{:.2f}, F1 {:.2f}->{:.2f}{};", h.detector, h.delta_r_before,
                                     h.delta_r_after, h.f1_before, h.f1_after, row_ok ? "" : " (x)");
            }
            record(11, ok, "adversarial training (dR after <= half of before, F1 drop <= 10):" + parts);
        }
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Runs every acceptance criterion"};
    std::string work = "acceptance-work";
    std::string tests_bin = DFB_TESTS_BIN;
    std::string report;
    std::size_t seeds = 3;
    bool keep = false, strict = false, verbose = false;
    app.add_option("--work", work, "Scratch directory for workspaces");
    app.add_option("--tests", tests_bin, "Path to the unit-test binary");
    app.add_option("--report", report, "Also write the verdict lines to this file");
    app.add_option("--seeds", seeds, "Number of seeds for multi-seed criteria")->check(CLI::Range(1, 10));
    app.add_flag("--keep", keep, "Reuse cached checkpoints from an earlier run");
    app.add_flag("--strict", strict, "Exit 1 when any criterion fails");
    app.add_flag("-v,--verbose", verbose, "Log pipeline progress to stderr");
    CLI11_PARSE(app, argc, argv);

    try {
        const fs::path root = fs::absolute(work);
        if (!keep) fs::remove_all(root);
        fs::create_directories(root);
        std::ostream* log = verbose ? &std::cerr : nullptr;

        unit_criterion(1, "autodiff suite", tests_bin, "GradCheck.*:ConvKernels.*:Graph.*", 120.0);
        unit_criterion(2, "DCT exactness", tests_bin, "Dct.*", 120.0);
        unit_criterion(3, "metric formulas", tests_bin, "DeltaRecall.*:Kid.*", 120.0);

        std::vector<SeedRun> runs;
        for (std::uint64_t s = 1; s <= seeds; ++s) {
            const auto t0 = std::chrono::steady_clock::now();
            runs.push_back(run_seed(root / fmt::format("seed-{}", s), s, s == 1, log));
            std::cout << fmt::format("  seed {} done in {:.0f} s", s, seconds_since(t0)) << std::endl;
        }
        judge_models(runs);

        // Independent rebuild of seed 1 in a fresh directory.
        {
            const fs::path again = root / "seed-1-rerun";
            fs::remove_all(again);
            dfb::ExperimentConfig config;
            config.seed = 1;
            config.out_dir = again.string();
            dfb::Workspace ws(config, true, log);
            std::vector<std::string> bad;
            for (const std::string p : {"baseline", "generalize", "enhance"}) {
                dfb::run_pipeline(p, ws);
                for (auto& d : csv_differences(root / "seed-1", again, p)) bad.push_back(d);
            }
            record(12, bad.empty(),
                   bad.empty() ? "reproducibility: baseline, generalize, enhance CSVs byte-identical on a fresh rebuild"
                               : "reproducibility: differing CSVs: " + fmt::format("{}", fmt::join(bad, " ")));
        }
    } catch (const std::exception& e) {
        std::cerr << "acceptance: " << e.what() << "\n";
        return 3;
    }

    std::size_t passed = 0;
    for (const auto& v : verdicts) passed += v.pass ? 1 : 0;
    const std::string summary = fmt::format("{}/{} criteria passed", passed, verdicts.size());
    std::cout << summary << std::endl;
    if (!report.empty()) {
        std::ofstream out(report);
        for (const auto& v : verdicts)
            out << fmt::format("[{}] criterion {:>2}: {}\n", v.pass ? "PASS" : "FAIL", v.id, v.text);
        out << summary << "\n";
    }
    return strict && passed != verdicts.size() ? 1 : 0;
}
