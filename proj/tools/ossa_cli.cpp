#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ossa/ossa.hpp"

namespace fs = std::filesystem;
using namespace ossa;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

json read_json(const fs::path &path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error &e) {
        throw ValidationError(path.string() + " is not valid JSON: " + e.what());
    }
}

std::vector<InsertionPoint> split_layers(const std::string &csv) {
    std::vector<InsertionPoint> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const auto comma = csv.find(',', start);
        const std::string name = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (!name.empty()) out.push_back(require_insertion_point(name));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (out.empty()) throw ValidationError("--layers: no layer names given");
    return out;
}

Backbone<float> load_backbone(const std::string &model_path, const std::string &arch_path, std::uint64_t seed) {
    if (!model_path.empty()) return backbone_from_json<float>(read_json(model_path));
    const ArchConfig arch = arch_path.empty() ? ArchConfig{} : arch_from_json(read_json(arch_path));
    return Backbone<float>::build(arch, seed);
}

struct ExtractArgs {
    std::vector<std::string> images;
    std::string backbone;
    std::string arch;
    std::uint64_t backbone_seed = 0;
    std::string layers = "post_stem,post_stage1";
    std::string out = "prototype.json";
    double eps = kDefaultEps;
    std::uint64_t seed = 0;
};

int cmd_extract(const ExtractArgs &a) {
    const auto layers = split_layers(a.layers);
    const Backbone<float> net = load_backbone(a.backbone, a.arch, a.backbone_seed);
    std::vector<fs::path> paths(a.images.begin(), a.images.end());
    const StylePrototype proto =
        extract_prototype_from_files(net, std::span<const fs::path>(paths), std::span<const InsertionPoint>(layers),
                                     a.eps, a.seed);
    const fs::path out = resolve_output(a.out);
    save_prototype(proto, out);
    std::cout << "wrote " << out.string() << " (" << proto.meta.image_count << " image(s), backbone "
              << proto.meta.backbone_fingerprint << ")\n";
    return kExitOk;
}

struct GapArgs {
    std::string a;
    std::string b;
    std::string out = "gap";
    std::size_t bins = 20;
    std::string label_a = "a";
    std::string label_b = "b";
};

int cmd_gap_report(const GapArgs &g) {
    const StylePrototype pa = load_prototype(g.a);
    const StylePrototype pb = load_prototype(g.b);
    const GapReport r = gap_report(pa, pb, g.bins, g.label_a, g.label_b);
    const fs::path out = resolve_output(g.out);
    write_gap_report(r, out);
    std::cout << gap_table_csv(r);
    return kExitOk;
}

TrainConfig load_train_config(const std::string &path, const std::optional<std::uint64_t> &seed) {
    TrainConfig cfg = train_config_from_json(read_json(path));
    if (seed) cfg.seed = *seed;
    return cfg;
}

struct TrainArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

int cmd_train(const TrainArgs &t) {
    const TrainConfig cfg = load_train_config(t.config, t.seed);
    const fs::path out = resolve_output(t.out.empty() ? cfg.output_dir : t.out);
    const TrainResult result = train(cfg);
    write_run_outputs(result, out);
    std::cout << "source accuracy " << result.report.source.accuracy << ", target accuracy "
              << result.report.target.accuracy << "; outputs in " << out.string() << '\n';
    return kExitOk;
}

struct EvalArgs {
    std::string config;
    std::string model;
    std::optional<std::uint64_t> seed;
    std::string out = "eval.json";
};

int cmd_eval(const EvalArgs &e) {
    const TrainConfig cfg = load_train_config(e.config, e.seed);
    const Backbone<float> net = backbone_from_json<float>(read_json(e.model));
    const EvalMetrics source = evaluate(net, cfg.data.source_test.load());
    const EvalMetrics target = evaluate(net, cfg.data.target_test.load());
    const json report{{"model", e.model},
                      {"backbone_fingerprint", net.fingerprint()},
                      {"seed", cfg.seed},
                      {"source", source},
                      {"target", target},
                      {"source_accuracy", source.accuracy},
                      {"target_accuracy", target.accuracy}};
    const fs::path out = resolve_output(e.out);
    write_file_atomic(out, report.dump(2) + "\n");
    std::cout << "source accuracy " << source.accuracy << ", target accuracy " << target.accuracy << '\n';
    return kExitOk;
}

struct AblateArgs {
    std::string grid;
    std::string out_dir = "ablation";
    std::optional<std::size_t> workers;
};

int cmd_ablate(const AblateArgs &a) {
    AblationGrid grid = ablation_grid_from_json(read_json(a.grid), fs::path(a.grid).parent_path());
    if (a.workers) grid.workers = *a.workers;
    grid.validate();
    const fs::path out = resolve_output(a.out_dir);
    const TrainData data = TrainData::load(grid.base.data);
    const AblationResult r = run_ablation(grid, data, out, [](const AblationCell &cell, const AblationRun &run) {
        std::cout << "cell " << cell.index << " seed " << run.seed << ": ";
        if (run.ok) {
            std::cout << "source " << run.source_accuracy << " target " << run.target_accuracy << '\n';
        } else {
            std::cout << "failed (" << run.error << ")\n";
        }
        std::cout.flush();
    });
    write_ablation_outputs(r, grid, out);
    std::cout << cells_csv(r, grid.axes.active());
    return kExitOk;
}

struct GenerateArgs {
    std::string config;
    std::string out_dir = "data";
};

int cmd_generate(const GenerateArgs &g) {
    const TrainConfig cfg = g.config.empty() ? TrainConfig{} : train_config_from_json(read_json(g.config));
    const fs::path out = resolve_output(g.out_dir);
    const std::pair<const char *, const DatasetRef *> splits[] = {{"source_train", &cfg.data.source_train},
                                                                  {"source_test", &cfg.data.source_test},
                                                                  {"target_train", &cfg.data.target_train},
                                                                  {"target_test", &cfg.data.target_test}};
    for (const auto &[name, ref] : splits) {
        if (!ref->synthetic) throw ValidationError(std::string("data.") + name + " is not a synthetic dataset");
    }
    for (const auto &[name, ref] : splits) {
        const Dataset ds = generate_dataset(*ref->synthetic);
        write_dataset(ds, out / name);
        std::cout << name << ": " << ds.size() << " images\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"One-shot style adaptation toolkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    app.footer(std::string("Relative output paths are resolved under $") + kOutputRootEnv + " when set.");

    ExtractArgs ex;
    auto *extract = app.add_subcommand("extract", "Measure a style prototype from one or more images");
    extract->add_option("--images", ex.images, "PNG images")->required()->check(CLI::ExistingFile);
    auto *bb = extract->add_option("--backbone", ex.backbone, "Saved model (model.json)")->check(CLI::ExistingFile);
    extract->add_option("--arch", ex.arch, "Architecture JSON for a freshly initialized backbone")
        ->check(CLI::ExistingFile)
        ->excludes(bb);
    extract->add_option("--backbone-seed", ex.backbone_seed, "Initialization seed when no model is given")
        ->excludes(bb);
    extract->add_option("--layers", ex.layers, "Comma-separated insertion points")->capture_default_str();
    extract->add_option("--out", ex.out, "Output prototype file")->capture_default_str();
    extract->add_option("--eps", ex.eps, "Variance epsilon")->capture_default_str();
    extract->add_option("--seed", ex.seed, "Seed recorded in the prototype")->capture_default_str();

    GapArgs gap;
    auto *gap_cmd = app.add_subcommand("gap-report", "Compare the channel statistics of two prototypes");
    gap_cmd->add_option("a", gap.a, "First prototype")->required()->check(CLI::ExistingFile);
    gap_cmd->add_option("b", gap.b, "Second prototype")->required()->check(CLI::ExistingFile);
    gap_cmd->add_option("--out", gap.out, "Output directory")->capture_default_str();
    gap_cmd->add_option("--bins", gap.bins, "Histogram bins")->check(CLI::PositiveNumber)->capture_default_str();
    gap_cmd->add_option("--label-a", gap.label_a, "Legend label of the first prototype");
    gap_cmd->add_option("--label-b", gap.label_b, "Legend label of the second prototype");

    TrainArgs tr;
    auto *train_cmd = app.add_subcommand("train", "Train the toy backbone");
    train_cmd->add_option("config", tr.config, "Training config JSON")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--seed", tr.seed, "Override the config seed");
    train_cmd->add_option("--out", tr.out, "Output directory (default: config output_dir)");

    EvalArgs ev;
    auto *eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on the config's test splits");
    eval_cmd->add_option("config", ev.config, "Training config JSON")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--model", ev.model, "Saved model (model.json)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--seed", ev.seed, "Override the config seed");
    eval_cmd->add_option("--out", ev.out, "Output report file")->capture_default_str();

    AblateArgs ab;
    auto *ablate = app.add_subcommand("ablate", "Run an ablation grid");
    ablate->add_option("grid", ab.grid, "Grid JSON")->required()->check(CLI::ExistingFile);
    ablate->add_option("--out-dir", ab.out_dir, "Output directory")->capture_default_str();
    ablate->add_option("--workers", ab.workers, "Concurrent runs")->check(CLI::PositiveNumber);

    GenerateArgs gen;
    auto *generate = app.add_subcommand("generate", "Write the synthetic datasets of a config as PNG directories");
    generate->add_option("--config", gen.config, "Training config JSON (default config when omitted)")
        ->check(CLI::ExistingFile);
    generate->add_option("--out-dir", gen.out_dir, "Output directory")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        return app.exit(e) == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*extract) return cmd_extract(ex);
        if (*gap_cmd) return cmd_gap_report(gap);
        if (*train_cmd) return cmd_train(tr);
        if (*eval_cmd) return cmd_eval(ev);
        if (*ablate) return cmd_ablate(ab);
        if (*generate) return cmd_generate(gen);
    } catch (const ValidationError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const InvalidInput &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const ShapeMismatch &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitRuntime;
}
