#pragma once

// Ablation grids: the cross product of OSSA settings, each trained once per
// seed on shared data, aggregated per cell and per axis value.
//
// Grid file:
// {
//   "base": {...} | "base_config": "path/to/train.json",   relative to the grid file
//   "seeds": [1, 2, 3],
//   "budget": 64,              max cells x seeds
//   "workers": 1,              > 1 runs cells concurrently
//   "axes": {"layers": [["post_stem"], ["post_stem", "post_stage1"]],
//            "noise_std": [0, 0.75], "prob": [0.5, 1.0],
//            "prototype_source": ["target", "source"],
//            "prototype_images": [1, 10], "enabled": [false, true]}
// }

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ossa/config.hpp"
#include "ossa/io.hpp"
#include "ossa/json_util.hpp"
#include "ossa/train.hpp"

namespace ossa {

struct AblationAxes {
    std::vector<std::vector<InsertionPoint>> layers;
    std::vector<double> noise_std;
    std::vector<double> prob;
    std::vector<PrototypeSource> prototype_source;
    std::vector<int> prototype_images;
    std::vector<bool> enabled;

    /// Names of the non-empty axes, in a fixed order.
    [[nodiscard]] std::vector<std::string> active() const {
        std::vector<std::string> out;
        if (!layers.empty()) out.emplace_back("layers");
        if (!noise_std.empty()) out.emplace_back("noise_std");
        if (!prob.empty()) out.emplace_back("prob");
        if (!prototype_source.empty()) out.emplace_back("prototype_source");
        if (!prototype_images.empty()) out.emplace_back("prototype_images");
        if (!enabled.empty()) out.emplace_back("enabled");
        return out;
    }
};

inline std::string layers_label(const std::vector<InsertionPoint> &layers) {
    std::string s;
    for (auto l : layers) {
        if (!s.empty()) s += '+';
        s += name_of(l);
    }
    return s;
}

struct AblationCell {
    std::size_t index = 0;
    /// Axis name -> printable value, in AblationAxes::active() order.
    std::vector<std::pair<std::string, std::string>> settings;
    TrainConfig config;
};

struct AblationGrid {
    TrainConfig base;
    AblationAxes axes;
    std::vector<std::uint64_t> seeds = {1};
    std::size_t budget = 64;
    std::size_t workers = 1;

    [[nodiscard]] std::size_t cell_count() const {
        auto n = [](std::size_t k) { return k == 0 ? std::size_t{1} : k; };
        return n(axes.layers.size()) * n(axes.noise_std.size()) * n(axes.prob.size()) *
               n(axes.prototype_source.size()) * n(axes.prototype_images.size()) * n(axes.enabled.size());
    }

    /// Cross product in axis order, last axis varying fastest.
    [[nodiscard]] std::vector<AblationCell> cells() const {
        std::vector<AblationCell> out(1);
        out.front().config = base;
        auto expand = [&out](std::size_t count, const std::function<void(AblationCell &, std::size_t)> &apply) {
            if (count == 0) return;
            std::vector<AblationCell> next;
            for (const auto &c : out) {
                for (std::size_t i = 0; i < count; ++i) {
                    AblationCell k = c;
                    apply(k, i);
                    next.push_back(std::move(k));
                }
            }
            out = std::move(next);
        };
        expand(axes.layers.size(), [&](AblationCell &c, std::size_t i) {
            c.config.ossa.layers = axes.layers[i];
            c.settings.emplace_back("layers", layers_label(axes.layers[i]));
        });
        expand(axes.noise_std.size(), [&](AblationCell &c, std::size_t i) {
            c.config.ossa.noise.std = axes.noise_std[i];
            c.settings.emplace_back("noise_std", detail::fmt(axes.noise_std[i]));
        });
        expand(axes.prob.size(), [&](AblationCell &c, std::size_t i) {
            c.config.ossa.prob = axes.prob[i];
            c.settings.emplace_back("prob", detail::fmt(axes.prob[i]));
        });
        expand(axes.prototype_source.size(), [&](AblationCell &c, std::size_t i) {
            c.config.ossa.prototype_source = axes.prototype_source[i];
            c.settings.emplace_back("prototype_source", std::string(name_of(axes.prototype_source[i])));
        });
        expand(axes.prototype_images.size(), [&](AblationCell &c, std::size_t i) {
            c.config.ossa.prototype_images = axes.prototype_images[i];
            c.settings.emplace_back("prototype_images", std::to_string(axes.prototype_images[i]));
        });
        expand(axes.enabled.size(), [&](AblationCell &c, std::size_t i) {
            c.config.ossa.enabled = axes.enabled[i];
            c.settings.emplace_back("enabled", axes.enabled[i] ? "true" : "false");
        });
        for (std::size_t i = 0; i < out.size(); ++i) out[i].index = i;
        return out;
    }

    void validate() const {
        if (seeds.empty()) throw ValidationError("grid.seeds must be non-empty");
        if (workers < 1) throw ValidationError("grid.workers must be >= 1");
        const std::size_t runs = cell_count() * seeds.size();
        if (runs > budget) {
            throw ValidationError("grid: " + std::to_string(runs) + " runs exceed budget " + std::to_string(budget));
        }
        for (const auto &c : cells()) {
            try {
                c.config.validate();
            } catch (const ValidationError &e) {
                throw ValidationError("grid cell " + std::to_string(c.index) + ": " + e.what());
            }
        }
    }
};

inline AblationGrid ablation_grid_from_json(const json &j, const std::filesystem::path &base_dir = {}) {
    constexpr std::string_view ctx = "grid";
    detail::reject_unknown_keys(j, {"base", "base_config", "seeds", "budget", "workers", "axes"}, ctx);
    AblationGrid g;
    if (j.contains("base") && j.contains("base_config")) {
        throw ValidationError("grid: give at most one of 'base' or 'base_config'");
    }
    if (j.contains("base")) {
        g.base = train_config_from_json(j.at("base"));
    } else if (j.contains("base_config")) {
        std::filesystem::path p = detail::get_required<std::string>(j, "base_config", ctx);
        if (p.is_relative()) p = base_dir / p;
        json bj;
        try {
            bj = json::parse(read_file(p));
        } catch (const json::parse_error &e) {
            throw ValidationError("grid.base_config: " + p.string() + " is not valid JSON: " + e.what());
        }
        g.base = train_config_from_json(bj);
    }
    g.seeds = detail::get_or<std::vector<std::uint64_t>>(j, "seeds", g.seeds, ctx);
    g.budget = detail::get_or<std::size_t>(j, "budget", g.budget, ctx);
    g.workers = detail::get_or<std::size_t>(j, "workers", g.workers, ctx);
    if (j.contains("axes")) {
        const json &a = j.at("axes");
        const std::string actx = "grid.axes";
        detail::reject_unknown_keys(a, {"layers", "noise_std", "prob", "prototype_source", "prototype_images", "enabled"},
                                    actx);
        for (const auto &set : detail::get_or<std::vector<std::vector<std::string>>>(a, "layers", {}, actx)) {
            g.axes.layers.push_back(parse_layers(set));
        }
        g.axes.noise_std = detail::get_or<std::vector<double>>(a, "noise_std", {}, actx);
        g.axes.prob = detail::get_or<std::vector<double>>(a, "prob", {}, actx);
        for (const auto &s : detail::get_or<std::vector<std::string>>(a, "prototype_source", {}, actx)) {
            g.axes.prototype_source.push_back(parse_prototype_source(s, actx + ".prototype_source"));
        }
        g.axes.prototype_images = detail::get_or<std::vector<int>>(a, "prototype_images", {}, actx);
        g.axes.enabled = detail::get_or<std::vector<bool>>(a, "enabled", {}, actx);
    }
    g.validate();
    return g;
}

struct Aggregate {
    double mean = 0.0;
    /// Population standard deviation (divides by n).
    double std = 0.0;
    std::size_t n = 0;
};

inline Aggregate aggregate(std::span<const double> values) {
    Aggregate a;
    a.n = values.size();
    if (a.n == 0) return a;
    for (double v : values) a.mean += v;
    a.mean /= static_cast<double>(a.n);
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(a.n));
    return a;
}

struct AblationRun {
    std::size_t cell = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    double source_accuracy = 0.0;
    double target_accuracy = 0.0;
    double final_loss = 0.0;
    std::size_t ossa_applied_steps = 0;
};

struct CellSummary {
    std::size_t cell = 0;
    Aggregate source;
    Aggregate target;
    std::size_t failed = 0;
};

struct AblationResult {
    std::vector<AblationCell> cells;
    std::vector<AblationRun> runs;
    std::vector<CellSummary> summaries;
};

inline std::vector<CellSummary> summarize(std::size_t n_cells, std::span<const AblationRun> runs) {
    std::vector<CellSummary> out(n_cells);
    for (std::size_t c = 0; c < n_cells; ++c) {
        std::vector<double> src;
        std::vector<double> tgt;
        out[c].cell = c;
        for (const auto &r : runs) {
            if (r.cell != c) continue;
            if (!r.ok) {
                ++out[c].failed;
                continue;
            }
            src.push_back(r.source_accuracy);
            tgt.push_back(r.target_accuracy);
        }
        out[c].source = aggregate(src);
        out[c].target = aggregate(tgt);
    }
    return out;
}

inline std::string run_dir_name(const AblationCell &cell, std::uint64_t seed) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "cell_%03zu/seed_%llu", cell.index, static_cast<unsigned long long>(seed));
    return buf;
}

/// Runs every cell x seed. A failing run is recorded and the grid moves on.
/// When `out_dir` is non-empty each run's outputs go to
/// out_dir/cell_NNN/seed_S/. `progress` is called after each run, serialized.
inline AblationResult run_ablation(const AblationGrid &grid, const TrainData &data,
                                   const std::filesystem::path &out_dir = {},
                                   const std::function<void(const AblationCell &, const AblationRun &)> &progress = {}) {
    grid.validate();
    AblationResult result;
    result.cells = grid.cells();
    struct Job {
        std::size_t cell;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (const auto &c : result.cells) {
        for (auto s : grid.seeds) jobs.push_back({c.index, s});
    }
    result.runs.resize(jobs.size());
    std::mutex report_mutex;
    auto execute = [&](std::size_t j) {
        const AblationCell &cell = result.cells[jobs[j].cell];
        AblationRun &run = result.runs[j];
        run.cell = cell.index;
        run.seed = jobs[j].seed;
        try {
            TrainConfig cfg = cell.config;
            cfg.seed = run.seed;
            const TrainResult tr = train(cfg, data);
            run.ok = true;
            run.source_accuracy = tr.report.source.accuracy;
            run.target_accuracy = tr.report.target.accuracy;
            run.final_loss = tr.report.epoch_loss.empty() ? 0.0 : tr.report.epoch_loss.back();
            run.ossa_applied_steps = tr.report.ossa_applied_steps;
            if (!out_dir.empty()) write_run_outputs(tr, out_dir / run_dir_name(cell, run.seed));
        } catch (const std::exception &e) {
            run.ok = false;
            run.error = e.what();
        }
        if (progress) {
            std::lock_guard lock(report_mutex);
            progress(cell, run);
        }
    };
    if (grid.workers <= 1) {
        for (std::size_t j = 0; j < jobs.size(); ++j) execute(j);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(grid.workers, jobs.size()); ++w) {
            pool.emplace_back([&] {
                for (std::size_t j = next++; j < jobs.size(); j = next++) execute(j);
            });
        }
    }
    result.summaries = summarize(result.cells.size(), result.runs);
    return result;
}

namespace detail {

inline std::string csv_field(const std::string &s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

} // namespace detail

/// One row per run.
inline std::string results_csv(const AblationResult &r, const std::vector<std::string> &axes) {
    std::ostringstream out;
    out << "cell,seed";
    for (const auto &a : axes) out << ',' << a;
    out << ",status,source_accuracy,target_accuracy,final_loss,ossa_applied_steps,error\n";
    for (const auto &run : r.runs) {
        out << run.cell << ',' << run.seed;
        for (const auto &[_, v] : r.cells[run.cell].settings) out << ',' << detail::csv_field(v);
        out << ',' << (run.ok ? "ok" : "failed") << ',';
        if (run.ok) {
            out << detail::fmt(run.source_accuracy) << ',' << detail::fmt(run.target_accuracy) << ','
                << detail::fmt(run.final_loss) << ',' << run.ossa_applied_steps << ',';
        } else {
            out << ",,,," << detail::csv_field(run.error);
        }
        out << '\n';
    }
    return out.str();
}

/// One row per cell: mean and population std over the successful seeds.
inline std::string cells_csv(const AblationResult &r, const std::vector<std::string> &axes) {
    std::ostringstream out;
    out << "cell";
    for (const auto &a : axes) out << ',' << a;
    out << ",runs,failed,source_mean,source_std,target_mean,target_std\n";
    for (const auto &s : r.summaries) {
        out << s.cell;
        for (const auto &[_, v] : r.cells[s.cell].settings) out << ',' << detail::csv_field(v);
        out << ',' << s.target.n << ',' << s.failed << ',' << detail::fmt(s.source.mean) << ','
            << detail::fmt(s.source.std) << ',' << detail::fmt(s.target.mean) << ',' << detail::fmt(s.target.std)
            << '\n';
    }
    return out.str();
}

/// Per axis, the mean target accuracy of each value (averaged over the cells
/// holding it) and the best value; plus the best cell overall.
inline json ablation_summary_json(const AblationResult &r, const std::vector<std::string> &axes) {
    auto aggregate_json = [](const Aggregate &a) { return json{{"mean", a.mean}, {"std", a.std}, {"n", a.n}}; };
    json cells = json::array();
    std::optional<std::size_t> best_cell;
    for (const auto &s : r.summaries) {
        json settings = json::object();
        for (const auto &[k, v] : r.cells[s.cell].settings) settings[k] = v;
        cells.push_back(json{{"cell", s.cell},
                             {"settings", settings},
                             {"source_accuracy", aggregate_json(s.source)},
                             {"target_accuracy", aggregate_json(s.target)},
                             {"failed", s.failed}});
        if (s.target.n > 0 && (!best_cell || s.target.mean > r.summaries[*best_cell].target.mean)) best_cell = s.cell;
    }
    json per_axis = json::object();
    for (std::size_t k = 0; k < axes.size(); ++k) {
        std::vector<std::string> values;
        std::vector<std::vector<double>> means;
        for (const auto &s : r.summaries) {
            if (s.target.n == 0) continue;
            const std::string &v = r.cells[s.cell].settings[k].second;
            auto it = std::find(values.begin(), values.end(), v);
            if (it == values.end()) {
                values.push_back(v);
                means.emplace_back();
                it = values.end() - 1;
            }
            means[static_cast<std::size_t>(it - values.begin())].push_back(s.target.mean);
        }
        json rows = json::array();
        std::optional<std::size_t> best;
        std::vector<double> avg;
        for (std::size_t i = 0; i < values.size(); ++i) {
            avg.push_back(aggregate(means[i]).mean);
            rows.push_back(json{{"value", values[i]}, {"mean_target_accuracy", avg[i]}, {"cells", means[i].size()}});
            if (!best || avg[i] > avg[*best]) best = i;
        }
        per_axis[axes[k]] = json{{"values", rows}, {"best", best ? json(values[*best]) : json(nullptr)}};
    }
    std::size_t failed = 0;
    for (const auto &run : r.runs) failed += run.ok ? 0 : 1;
    return json{{"std_convention", "population"},
                {"runs", r.runs.size()},
                {"failed_runs", failed},
                {"cells", cells},
                {"axes", per_axis},
                {"best_cell", best_cell ? json(*best_cell) : json(nullptr)}};
}

/// results.csv, cells.csv and summary.json under `dir`.
inline void write_ablation_outputs(const AblationResult &r, const AblationGrid &grid, const std::filesystem::path &dir) {
    const auto axes = grid.axes.active();
    write_file_atomic(dir / "results.csv", results_csv(r, axes));
    write_file_atomic(dir / "cells.csv", cells_csv(r, axes));
    write_file_atomic(dir / "summary.json", ablation_summary_json(r, axes).dump(2) + "\n");
}

} // namespace ossa
