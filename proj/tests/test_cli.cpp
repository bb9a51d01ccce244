#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "ossa/domains.hpp"
#include "ossa/prototype.hpp"
#include "test_util.hpp"

using namespace ossa;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string &args, const std::string &env = "OSSA_OUTPUT_ROOT=") {
    const std::string cmd = "env " + env + " " + OSSA_CLI_PATH + " " + args + " 2>&1";
    CliResult r;
    FILE *pipe = ::popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) r.output += buf;
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path &p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

json tiny_config_json() {
    auto dom = [](int per_class, std::uint64_t seed, double fog) {
        return json{{"synthetic",
                     {{"height", 12},
                      {"width", 12},
                      {"samples_per_class", per_class},
                      {"seed", seed},
                      {"style", {{"fog_intensity", fog}}}}}};
    };
    return json{{"seed", 3},
                {"arch", {{"stem_channels", 4}, {"stage_channels", {6, 6, 8}}}},
                {"data",
                 {{"source_train", dom(6, 1, 0.0)},
                  {"source_test", dom(3, 2, 0.0)},
                  {"target_train", dom(6, 3, 0.6)},
                  {"target_test", dom(3, 4, 0.6)}}},
                {"optimizer", {{"steps", 20}, {"batch_size", 8}}}};
}

std::vector<fs::path> write_images(const fs::path &dir, std::size_t n) {
    DomainSpec d;
    d.height = 12;
    d.width = 12;
    d.samples_per_class = static_cast<int>((n + 3) / 4);
    d.seed = 1;
    const Dataset ds = generate_dataset(d);
    std::vector<fs::path> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(dir / ("img" + std::to_string(i) + ".png"));
        write_png(out.back(), ds.images[i]);
    }
    return out;
}

std::string join(const std::vector<fs::path> &paths) {
    std::string s;
    for (const auto &p : paths) s += " " + p.string();
    return s;
}

json without_timing(json report) {
    report.erase("wall_clock_seconds");
    return report;
}

} // namespace

TEST(Cli, NoSubcommandIsValidationError) { EXPECT_EQ(run_cli("").code, 1); }

TEST(Cli, BadProbabilityNamesTheField) {
    testutil::TempDir dir("cli_prob");
    json cfg = tiny_config_json();
    cfg["ossa"] = {{"prob", 1.3}};
    std::ofstream(dir.path() / "cfg.json") << cfg.dump();
    const CliResult r = run_cli("train " + (dir.path() / "cfg.json").string() + " --out " + (dir.path() / "run").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("ossa.prob"), std::string::npos) << r.output;
    EXPECT_FALSE(fs::exists(dir.path() / "run" / "report.json"));
}

TEST(Cli, MissingImageWritesNothing) {
    testutil::TempDir dir("cli_missing");
    const fs::path out = dir.path() / "proto.json";
    const CliResult r = run_cli("extract --images " + (dir.path() / "nope.png").string() + " --out " + out.string());
    EXPECT_NE(r.code, 0);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, UnknownLayerIsValidationError) {
    testutil::TempDir dir("cli_layer");
    const auto imgs = write_images(dir.path(), 1);
    const CliResult r = run_cli("extract --images" + join(imgs) + " --layers post_stage7 --out " +
                                (dir.path() / "p.json").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.output.find("post_stage7"), std::string::npos);
}

TEST(Cli, ExtractOneAndTenImages) {
    testutil::TempDir dir("cli_extract");
    const auto imgs = write_images(dir.path(), 10);
    const fs::path one = dir.path() / "one.json";
    const fs::path ten = dir.path() / "ten.json";
    ASSERT_EQ(run_cli("extract --images " + imgs[0].string() + " --out " + one.string()).code, 0);
    ASSERT_EQ(run_cli("extract --images" + join(imgs) + " --out " + ten.string()).code, 0);
    const StylePrototype p1 = load_prototype(one);
    const StylePrototype p10 = load_prototype(ten);
    EXPECT_EQ(p1.meta.image_count, 1u);
    EXPECT_EQ(p10.meta.image_count, 10u);
    EXPECT_EQ(p1.meta.backbone_fingerprint, p10.meta.backbone_fingerprint);
    EXPECT_EQ(p1.layers.size(), 2u);

    const fs::path gap = dir.path() / "gap";
    const CliResult r = run_cli("gap-report " + one.string() + " " + ten.string() + " --out " + gap.string());
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(gap / "gap.csv"));
    EXPECT_TRUE(fs::exists(gap / "gap_hist.svg"));
}

TEST(Cli, GapReportRejectsForeignShapes) {
    testutil::TempDir dir("cli_gapshape");
    const auto imgs = write_images(dir.path(), 1);
    const fs::path a = dir.path() / "a.json";
    const fs::path b = dir.path() / "b.json";
    ASSERT_EQ(run_cli("extract --images" + join(imgs) + " --layers post_stem --out " + a.string()).code, 0);
    std::ofstream(dir.path() / "arch.json") << json{{"stem_channels", 8}}.dump();
    ASSERT_EQ(run_cli("extract --images" + join(imgs) + " --layers post_stem --arch " +
                      (dir.path() / "arch.json").string() + " --out " + b.string())
                  .code,
              0);
    EXPECT_EQ(run_cli("gap-report " + a.string() + " " + b.string() + " --out " + (dir.path() / "g").string()).code, 1);
}

TEST(Cli, TrainTwiceSameSeedIsIdentical) {
    testutil::TempDir dir("cli_train");
    std::ofstream(dir.path() / "cfg.json") << tiny_config_json().dump();
    const std::string cfg = (dir.path() / "cfg.json").string();
    ASSERT_EQ(run_cli("train " + cfg + " --seed 7 --out " + (dir.path() / "a").string()).code, 0);
    ASSERT_EQ(run_cli("train " + cfg + " --seed 7 --out " + (dir.path() / "b").string()).code, 0);
    EXPECT_EQ(slurp(dir.path() / "a" / "model.json"), slurp(dir.path() / "b" / "model.json"));
    const json ra = json::parse(slurp(dir.path() / "a" / "report.json"));
    const json rb = json::parse(slurp(dir.path() / "b" / "report.json"));
    EXPECT_EQ(ra["seed"], 7);
    EXPECT_EQ(without_timing(ra), without_timing(rb));

    const fs::path ev = dir.path() / "eval.json";
    ASSERT_EQ(run_cli("eval " + cfg + " --model " + (dir.path() / "a" / "model.json").string() + " --out " + ev.string())
                  .code,
              0);
    EXPECT_EQ(json::parse(slurp(ev))["target_accuracy"], ra["target_accuracy"]);
}

TEST(Cli, OutputRootIsHonored) {
    testutil::TempDir dir("cli_root");
    std::ofstream(dir.path() / "cfg.json") << tiny_config_json().dump();
    const CliResult r = run_cli("train " + (dir.path() / "cfg.json").string() + " --out rel_run",
                                "OSSA_OUTPUT_ROOT=" + (dir.path() / "root").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir.path() / "root" / "rel_run" / "report.json"));
    EXPECT_TRUE(fs::exists(dir.path() / "root" / "rel_run" / "prototype.json"));
}

TEST(Cli, AblateWritesSummary) {
    testutil::TempDir dir("cli_ablate");
    std::ofstream(dir.path() / "base.json") << tiny_config_json().dump();
    std::ofstream(dir.path() / "grid.json")
        << json{{"base_config", "base.json"}, {"seeds", {1, 2}}, {"axes", {{"noise_std", {0.0, 0.75}}}}}.dump();
    const fs::path out = dir.path() / "abl";
    const CliResult r = run_cli("ablate " + (dir.path() / "grid.json").string() + " --out-dir " + out.string());
    ASSERT_EQ(r.code, 0) << r.output;
    const json s = json::parse(slurp(out / "summary.json"));
    EXPECT_EQ(s["runs"], 4);
    EXPECT_TRUE(fs::exists(out / "cells.csv"));
    EXPECT_TRUE(fs::exists(out / "cell_001" / "seed_2" / "report.json"));

    std::ofstream(dir.path() / "big.json")
        << json{{"base_config", "base.json"}, {"seeds", {1, 2, 3}}, {"budget", 2}}.dump();
    EXPECT_EQ(run_cli("ablate " + (dir.path() / "big.json").string() + " --out-dir " + out.string()).code, 1);
}

TEST(Cli, CorruptedPrototypeIsValidationError) {
    testutil::TempDir dir("cli_corrupt");
    std::ofstream(dir.path() / "p.json") << "{\"schema_version\": 1, \"lay";
    EXPECT_EQ(run_cli("gap-report " + (dir.path() / "p.json").string() + " " + (dir.path() / "p.json").string() +
                      " --out " + (dir.path() / "g").string())
                  .code,
              1);
}
