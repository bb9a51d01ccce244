#pragma once

// Training configuration and its JSON form.
//
// {
//   "seed": 1,
//   "backbone_seed": 1,                      optional, defaults to seed
//   "output_dir": "runs/ossa",
//   "arch": {...},                           see ArchConfig
//   "data": {"pair": {...}}                  synthetic source/target pair, or
//           {"source_train": REF, "source_test": REF,
//            "target_train": REF, "target_test": REF}
//                                            REF = {"dir": path} | {"synthetic": DomainSpec}
//   "ossa": {"enabled": true, "layers": ["post_stem", "post_stage1"], "prob": 0.5,
//            "noise_std": 0.75, "eps": 1e-5, "prototype_source": "target"|"source"|"file",
//            "prototype_images": 1, "prototype_path": "..."},
//   "optimizer": {"lr": 0.05, "momentum": 0.9, "weight_decay": 0, "steps": 4000,
//                 "batch_size": 32, "decay_step": -1, "decay_factor": 0.1}
// }

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ossa/backbone.hpp"
#include "ossa/domains.hpp"
#include "ossa/json_util.hpp"
#include "ossa/style_transform.hpp"

namespace ossa {

inline constexpr double kDefaultApplyProb = 0.5;

enum class PrototypeSource { Target, Source, File };

inline std::string_view name_of(PrototypeSource s) {
    switch (s) {
    case PrototypeSource::Target: return "target";
    case PrototypeSource::Source: return "source";
    case PrototypeSource::File: return "file";
    }
    return "target";
}

inline PrototypeSource parse_prototype_source(std::string_view s, std::string_view ctx) {
    if (s == "target") return PrototypeSource::Target;
    if (s == "source") return PrototypeSource::Source;
    if (s == "file") return PrototypeSource::File;
    throw ValidationError(std::string(ctx) + ": expected 'target', 'source' or 'file', got '" + std::string(s) + "'");
}

struct OssaConfig {
    bool enabled = true;
    std::vector<InsertionPoint> layers = {InsertionPoint::PostStem, InsertionPoint::PostStage1};
    double prob = kDefaultApplyProb;
    NoiseSpec noise{};
    double eps = kDefaultEps;
    PrototypeSource prototype_source = PrototypeSource::Target;
    int prototype_images = 1;
    std::string prototype_path;

    void validate() const {
        if (!(prob >= 0.0 && prob <= 1.0)) {
            throw ValidationError("ossa.prob must be in [0, 1], got " + std::to_string(prob));
        }
        if (!(eps > 0.0) || !std::isfinite(eps)) throw ValidationError("ossa.eps must be > 0");
        if (!std::isfinite(noise.std) || noise.std < 0.0) throw ValidationError("ossa.noise_std must be >= 0");
        if (enabled && layers.empty()) throw ValidationError("ossa.layers must be non-empty when enabled");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            for (std::size_t k = 0; k < i; ++k) {
                if (layers[i] == layers[k]) throw ValidationError("ossa.layers: duplicate layer");
            }
        }
        if (prototype_images < 1) throw ValidationError("ossa.prototype_images must be >= 1");
        if (enabled && prototype_source == PrototypeSource::File && prototype_path.empty()) {
            throw ValidationError("ossa.prototype_path is required when prototype_source is 'file'");
        }
    }

    [[nodiscard]] bool uses(InsertionPoint p) const {
        for (auto l : layers) {
            if (l == p) return true;
        }
        return false;
    }
};

inline void to_json(json &j, const OssaConfig &c) {
    std::vector<std::string> names;
    for (auto l : c.layers) names.emplace_back(name_of(l));
    j = json{{"enabled", c.enabled},
             {"layers", names},
             {"prob", c.prob},
             {"noise_std", c.noise.std},
             {"eps", c.eps},
             {"prototype_source", name_of(c.prototype_source)},
             {"prototype_images", c.prototype_images}};
    if (!c.prototype_path.empty()) j["prototype_path"] = c.prototype_path;
}

inline std::vector<InsertionPoint> parse_layers(const std::vector<std::string> &names) {
    std::vector<InsertionPoint> out;
    for (const auto &n : names) out.push_back(require_insertion_point(n));
    return out;
}

inline OssaConfig ossa_from_json(const json &j, std::string_view ctx = "ossa") {
    detail::reject_unknown_keys(j,
                                {"enabled", "layers", "prob", "noise_std", "eps", "prototype_source",
                                 "prototype_images", "prototype_path"},
                                ctx);
    OssaConfig c;
    c.enabled = detail::get_or<bool>(j, "enabled", c.enabled, ctx);
    if (j.contains("layers")) c.layers = parse_layers(detail::get_required<std::vector<std::string>>(j, "layers", ctx));
    c.prob = detail::get_or<double>(j, "prob", c.prob, ctx);
    c.noise.std = detail::get_or<double>(j, "noise_std", c.noise.std, ctx);
    c.eps = detail::get_or<double>(j, "eps", c.eps, ctx);
    if (j.contains("prototype_source")) {
        c.prototype_source = parse_prototype_source(detail::get_required<std::string>(j, "prototype_source", ctx),
                                                    detail::join_path(ctx, "prototype_source"));
    }
    c.prototype_images = detail::get_or<int>(j, "prototype_images", c.prototype_images, ctx);
    c.prototype_path = detail::get_or<std::string>(j, "prototype_path", c.prototype_path, ctx);
    c.validate();
    return c;
}

struct OptimizerConfig {
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    int steps = 4000;
    int batch_size = 32;
    /// Step at which the learning rate is multiplied by decay_factor;
    /// negative means 5/7 of the run.
    int decay_step = -1;
    double decay_factor = 0.1;

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw ValidationError("optimizer.lr must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("optimizer.momentum must be in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ValidationError("optimizer.weight_decay must be >= 0");
        if (steps < 1) throw ValidationError("optimizer.steps must be >= 1");
        if (batch_size < 1) throw ValidationError("optimizer.batch_size must be >= 1");
        if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ValidationError("optimizer.decay_factor must be in (0, 1]");
    }

    [[nodiscard]] int effective_decay_step() const { return decay_step >= 0 ? decay_step : steps * 5 / 7; }
};

inline void to_json(json &j, const OptimizerConfig &o) {
    j = json{{"lr", o.lr},       {"momentum", o.momentum},     {"weight_decay", o.weight_decay},
             {"steps", o.steps}, {"batch_size", o.batch_size}, {"decay_step", o.decay_step},
             {"decay_factor", o.decay_factor}};
}

inline OptimizerConfig optimizer_from_json(const json &j, std::string_view ctx = "optimizer") {
    detail::reject_unknown_keys(
        j, {"lr", "momentum", "weight_decay", "steps", "batch_size", "decay_step", "decay_factor"}, ctx);
    OptimizerConfig o;
    o.lr = detail::get_or<double>(j, "lr", o.lr, ctx);
    o.momentum = detail::get_or<double>(j, "momentum", o.momentum, ctx);
    o.weight_decay = detail::get_or<double>(j, "weight_decay", o.weight_decay, ctx);
    o.steps = detail::get_or<int>(j, "steps", o.steps, ctx);
    o.batch_size = detail::get_or<int>(j, "batch_size", o.batch_size, ctx);
    o.decay_step = detail::get_or<int>(j, "decay_step", o.decay_step, ctx);
    o.decay_factor = detail::get_or<double>(j, "decay_factor", o.decay_factor, ctx);
    o.validate();
    return o;
}

/// A dataset given either as a directory with a manifest or as a generator spec.
struct DatasetRef {
    std::optional<DomainSpec> synthetic;
    std::filesystem::path dir;

    [[nodiscard]] Dataset load() const { return synthetic ? generate_dataset(*synthetic) : read_dataset(dir); }
};

inline void to_json(json &j, const DatasetRef &r) {
    if (r.synthetic) {
        j = json{{"synthetic", *r.synthetic}};
    } else {
        j = json{{"dir", r.dir.string()}};
    }
}

inline DatasetRef dataset_ref_from_json(const json &j, std::string_view ctx) {
    detail::reject_unknown_keys(j, {"dir", "synthetic"}, ctx);
    DatasetRef r;
    if (j.contains("synthetic") == j.contains("dir")) {
        throw ValidationError(std::string(ctx) + ": give exactly one of 'dir' or 'synthetic'");
    }
    if (j.contains("synthetic")) {
        r.synthetic = domain_from_json(j.at("synthetic"), detail::join_path(ctx, "synthetic"));
    } else {
        r.dir = detail::get_required<std::string>(j, "dir", ctx);
    }
    return r;
}

/// Source/target pair sharing content: the train splits are pixel-aligned
/// (the target train split only feeds prototypes), and so are the test splits.
struct SyntheticPair {
    int n_classes = 4;
    int height = 24;
    int width = 24;
    int train_per_class = 1000;
    int test_per_class = 250;
    std::uint64_t content_seed = 2024;
    StyleSpec source_style{};
    StyleSpec target_style{.fog_intensity = 0.6, .blur_radius = 1};
};

struct DataConfig {
    DatasetRef source_train;
    DatasetRef source_test;
    DatasetRef target_train;
    DatasetRef target_test;
    std::optional<SyntheticPair> pair;
};

inline DataConfig data_from_pair(const SyntheticPair &p) {
    auto make = [&](int per_class, std::uint64_t seed, const StyleSpec &style) {
        DomainSpec d;
        d.n_classes = p.n_classes;
        d.height = p.height;
        d.width = p.width;
        d.samples_per_class = per_class;
        d.seed = seed;
        d.style = style;
        d.validate("data.pair");
        return DatasetRef{d, {}};
    };
    const std::uint64_t train_seed = derive_seed(p.content_seed, "train");
    const std::uint64_t test_seed = derive_seed(p.content_seed, "test");
    DataConfig c;
    c.source_train = make(p.train_per_class, train_seed, p.source_style);
    c.target_train = make(p.train_per_class, train_seed, p.target_style);
    c.source_test = make(p.test_per_class, test_seed, p.source_style);
    c.target_test = make(p.test_per_class, test_seed, p.target_style);
    c.pair = p;
    return c;
}

inline void to_json(json &j, const SyntheticPair &p) {
    j = json{{"n_classes", p.n_classes},
             {"height", p.height},
             {"width", p.width},
             {"train_per_class", p.train_per_class},
             {"test_per_class", p.test_per_class},
             {"content_seed", p.content_seed},
             {"source_style", p.source_style},
             {"target_style", p.target_style}};
}

inline void to_json(json &j, const DataConfig &d) {
    if (d.pair) {
        j = json{{"pair", *d.pair}};
        return;
    }
    j = json{{"source_train", d.source_train},
             {"source_test", d.source_test},
             {"target_train", d.target_train},
             {"target_test", d.target_test}};
}

inline DataConfig data_from_json(const json &j, std::string_view ctx = "data") {
    detail::require_object(j, ctx);
    if (j.contains("pair")) {
        detail::reject_unknown_keys(j, {"pair"}, ctx);
        const json &pj = j.at("pair");
        const std::string pctx = detail::join_path(ctx, "pair");
        detail::reject_unknown_keys(pj,
                                    {"n_classes", "height", "width", "train_per_class", "test_per_class",
                                     "content_seed", "source_style", "target_style"},
                                    pctx);
        SyntheticPair p;
        p.n_classes = detail::get_or<int>(pj, "n_classes", p.n_classes, pctx);
        p.height = detail::get_or<int>(pj, "height", p.height, pctx);
        p.width = detail::get_or<int>(pj, "width", p.width, pctx);
        p.train_per_class = detail::get_or<int>(pj, "train_per_class", p.train_per_class, pctx);
        p.test_per_class = detail::get_or<int>(pj, "test_per_class", p.test_per_class, pctx);
        p.content_seed = detail::get_or<std::uint64_t>(pj, "content_seed", p.content_seed, pctx);
        if (pj.contains("source_style")) p.source_style = style_from_json(pj.at("source_style"), pctx + ".source_style");
        if (pj.contains("target_style")) p.target_style = style_from_json(pj.at("target_style"), pctx + ".target_style");
        return data_from_pair(p);
    }
    detail::reject_unknown_keys(j, {"source_train", "source_test", "target_train", "target_test"}, ctx);
    DataConfig d;
    for (const char *key : {"source_train", "source_test", "target_train", "target_test"}) {
        if (!j.contains(key)) throw ValidationError(detail::join_path(ctx, key) + ": missing required field");
    }
    d.source_train = dataset_ref_from_json(j.at("source_train"), detail::join_path(ctx, "source_train"));
    d.source_test = dataset_ref_from_json(j.at("source_test"), detail::join_path(ctx, "source_test"));
    d.target_train = dataset_ref_from_json(j.at("target_train"), detail::join_path(ctx, "target_train"));
    d.target_test = dataset_ref_from_json(j.at("target_test"), detail::join_path(ctx, "target_test"));
    return d;
}

struct TrainConfig {
    ArchConfig arch{};
    DataConfig data = data_from_pair(SyntheticPair{});
    OssaConfig ossa{};
    OptimizerConfig optimizer{};
    std::uint64_t seed = 0;
    std::optional<std::uint64_t> backbone_seed;
    std::string output_dir = "runs/train";

    void validate() const {
        arch.validate();
        ossa.validate();
        optimizer.validate();
    }

    [[nodiscard]] std::uint64_t effective_backbone_seed() const { return backbone_seed.value_or(seed); }
};

inline void to_json(json &j, const TrainConfig &c) {
    j = json{{"seed", c.seed}, {"output_dir", c.output_dir}, {"arch", c.arch},
             {"data", c.data}, {"ossa", c.ossa},             {"optimizer", c.optimizer}};
    if (c.backbone_seed) j["backbone_seed"] = *c.backbone_seed;
}

inline TrainConfig train_config_from_json(const json &j) {
    detail::reject_unknown_keys(j, {"seed", "backbone_seed", "output_dir", "arch", "data", "ossa", "optimizer"}, "");
    TrainConfig c;
    c.seed = detail::get_or<std::uint64_t>(j, "seed", c.seed, "");
    if (j.contains("backbone_seed")) c.backbone_seed = detail::get_required<std::uint64_t>(j, "backbone_seed", "");
    c.output_dir = detail::get_or<std::string>(j, "output_dir", c.output_dir, "");
    if (j.contains("arch")) c.arch = arch_from_json(j.at("arch"));
    if (j.contains("data")) c.data = data_from_json(j.at("data"));
    if (j.contains("ossa")) c.ossa = ossa_from_json(j.at("ossa"));
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"));
    c.validate();
    return c;
}

} // namespace ossa
