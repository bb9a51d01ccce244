#pragma once

// Training and evaluation of the toy backbone with probabilistic style
// injection.

#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ossa/backbone.hpp"
#include "ossa/config.hpp"
#include "ossa/domains.hpp"
#include "ossa/io.hpp"
#include "ossa/prototype.hpp"

namespace ossa {

template <typename T>
struct OssaForward {
    Matrix<T> logits;
    bool applied = false;
};

/// One Bernoulli(cfg.prob) draw from `coin_rng` per call. On heads the
/// prototype style, perturbed with alpha/beta drawn from `noise_rng`, is
/// injected at every configured layer; on tails this is a plain forward.
/// Pass a tape to make the call differentiable.
template <typename T>
OssaForward<T> forward_with_ossa(const Backbone<T> &net, const Tensor4<T> &batch, const StylePrototype &proto,
                                 const OssaConfig &cfg, SeededRng &coin_rng, SeededRng &noise_rng,
                                 Tape<T> *tape = nullptr) {
    cfg.validate();
    check_compatible(proto, net, std::span<const InsertionPoint>(cfg.layers));
    OssaForward<T> out;
    out.applied = cfg.enabled && coin_rng.bernoulli(cfg.prob);
    StylePlan plan;
    plan.noise = cfg.noise;
    plan.eps = cfg.eps;
    plan.rng = &noise_rng;
    if (out.applied) {
        for (InsertionPoint p : cfg.layers) plan.targets[static_cast<std::size_t>(p)] = &proto.at(p);
    }
    out.logits = tape != nullptr ? net.forward_train(batch, *tape, &plan) : net.forward(batch, &plan);
    return out;
}

/// Single-stream form: the coin and the noise come from the same stream.
template <typename T>
OssaForward<T> forward_with_ossa(const Backbone<T> &net, const Tensor4<T> &batch, const StylePrototype &proto,
                                 const OssaConfig &cfg, SeededRng &rng, Tape<T> *tape = nullptr) {
    return forward_with_ossa(net, batch, proto, cfg, rng, rng, tape);
}

struct EvalMetrics {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
    std::size_t count = 0;
};

inline void to_json(json &j, const EvalMetrics &m) {
    j = json{{"accuracy", m.accuracy}, {"per_class_accuracy", m.per_class_accuracy}, {"count", m.count}};
}

/// Top-1 and per-class accuracy. Never applies any style injection.
template <typename T>
EvalMetrics evaluate(const Backbone<T> &net, const Dataset &ds) {
    if (ds.size() == 0) throw InvalidInput("evaluate: empty dataset");
    const std::size_t n_classes = net.arch().n_classes;
    std::vector<std::size_t> hits(n_classes, 0);
    std::vector<std::size_t> totals(n_classes, 0);
    std::size_t correct = 0;
    constexpr std::size_t kChunk = 128;
    const std::span<const Image> images(ds.images);
    for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
        const std::size_t n = std::min(kChunk, ds.size() - begin);
        const Matrix<T> logits = net.forward(to_batch<T>(images.subspan(begin, n)));
        for (std::size_t b = 0; b < n; ++b) {
            const auto row = logits.row(b);
            const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            const int label = ds.labels[begin + b];
            if (label < 0 || static_cast<std::size_t>(label) >= n_classes) {
                throw InvalidInput("evaluate: label " + std::to_string(label) + " outside the classifier range");
            }
            const auto y = static_cast<std::size_t>(label);
            ++totals[y];
            if (pred == y) {
                ++hits[y];
                ++correct;
            }
        }
    }
    EvalMetrics m;
    m.count = ds.size();
    m.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    for (std::size_t c = 0; c < n_classes; ++c) {
        m.per_class_accuracy.push_back(totals[c] == 0 ? 0.0
                                                      : static_cast<double>(hits[c]) / static_cast<double>(totals[c]));
    }
    return m;
}

struct RunReport {
    json config;
    std::uint64_t seed = 0;
    std::vector<double> epoch_loss;
    EvalMetrics source;
    EvalMetrics target;
    std::size_t steps = 0;
    std::size_t ossa_applied_steps = 0;
    std::vector<std::string> prototype_image_ids;
    std::string backbone_fingerprint;
    double wall_clock_seconds = 0.0;
};

inline json run_report_to_json(const RunReport &r) {
    return json{{"seed", r.seed},
                {"config", r.config},
                {"train_loss", r.epoch_loss},
                {"source", r.source},
                {"target", r.target},
                {"source_accuracy", r.source.accuracy},
                {"target_accuracy", r.target.accuracy},
                {"steps", r.steps},
                {"ossa_applied_steps", r.ossa_applied_steps},
                {"prototype_image_ids", r.prototype_image_ids},
                {"backbone_fingerprint", r.backbone_fingerprint},
                {"wall_clock_seconds", r.wall_clock_seconds}};
}

inline EvalMetrics eval_metrics_from_json(const json &j, std::string_view ctx) {
    EvalMetrics m;
    m.accuracy = detail::get_required<double>(j, "accuracy", ctx);
    m.per_class_accuracy = detail::get_or<std::vector<double>>(j, "per_class_accuracy", {}, ctx);
    m.count = detail::get_or<std::size_t>(j, "count", 0, ctx);
    if (!(m.accuracy >= 0.0 && m.accuracy <= 1.0)) throw ValidationError(std::string(ctx) + ".accuracy outside [0, 1]");
    return m;
}

inline RunReport run_report_from_json(const json &j) {
    RunReport r;
    r.seed = detail::get_required<std::uint64_t>(j, "seed", "report");
    r.config = detail::get_or<json>(j, "config", json::object(), "report");
    r.epoch_loss = detail::get_or<std::vector<double>>(j, "train_loss", {}, "report");
    if (j.contains("source")) r.source = eval_metrics_from_json(j.at("source"), "report.source");
    if (j.contains("target")) r.target = eval_metrics_from_json(j.at("target"), "report.target");
    r.steps = detail::get_or<std::size_t>(j, "steps", 0, "report");
    r.ossa_applied_steps = detail::get_or<std::size_t>(j, "ossa_applied_steps", 0, "report");
    r.prototype_image_ids = detail::get_or<std::vector<std::string>>(j, "prototype_image_ids", {}, "report");
    r.backbone_fingerprint = detail::get_or<std::string>(j, "backbone_fingerprint", "", "report");
    r.wall_clock_seconds = detail::get_or<double>(j, "wall_clock_seconds", 0.0, "report");
    return r;
}

/// Datasets a run needs, loaded once so grids can share them.
struct TrainData {
    Dataset source_train;
    Dataset source_test;
    Dataset target_train;
    Dataset target_test;

    static TrainData load(const DataConfig &c) {
        return TrainData{c.source_train.load(), c.source_test.load(), c.target_train.load(), c.target_test.load()};
    }
};

struct TrainResult {
    Backbone<float> model;
    RunReport report;
    std::optional<StylePrototype> prototype;
    std::string log;
};

/// `count` distinct indices in [0, n), by partial Fisher-Yates.
inline std::vector<std::size_t> sample_without_replacement(SeededRng &rng, std::size_t n, std::size_t count) {
    if (count > n) throw InvalidInput("cannot draw " + std::to_string(count) + " of " + std::to_string(n) + " items");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    idx.resize(count);
    return idx;
}

/// Picks prototype images from the configured pool (target or source train
/// split) with a stream derived from the run seed, or loads the file.
template <typename T>
StylePrototype resolve_prototype(const TrainConfig &cfg, const Backbone<T> &net, const TrainData &data) {
    const OssaConfig &oc = cfg.ossa;
    if (oc.prototype_source == PrototypeSource::File) return load_prototype(oc.prototype_path);
    const Dataset &pool = oc.prototype_source == PrototypeSource::Target ? data.target_train : data.source_train;
    SeededRng rng(derive_seed(cfg.seed, "prototype"));
    const auto idx = sample_without_replacement(rng, pool.size(), static_cast<std::size_t>(oc.prototype_images));
    std::vector<Image> images;
    std::vector<std::string> ids;
    for (auto i : idx) {
        images.push_back(pool.images[i]);
        ids.push_back(std::string(name_of(oc.prototype_source)) + ":" + pool.ids[i]);
    }
    return extract_prototype(net, std::span<const Image>(images), std::span<const std::string>(ids),
                             std::span<const InsertionPoint>(oc.layers), oc.eps, cfg.seed);
}

/// Momentum SGD (v = m v + g + wd w; w -= lr v) on softmax cross-entropy.
/// Every random choice derives from cfg.seed through named sub-streams, so
/// the batch order is the same with and without style injection.
inline TrainResult train(const TrainConfig &cfg, const TrainData &data) {
    cfg.validate();
    const auto started = std::chrono::steady_clock::now();
    if (data.source_train.size() == 0) throw InvalidInput("train: empty source training set");
    if (static_cast<std::size_t>(data.source_train.n_classes) > cfg.arch.n_classes) {
        throw ValidationError("train: dataset has more classes than arch.n_classes");
    }

    TrainResult result{Backbone<float>::build(cfg.arch, cfg.effective_backbone_seed()), {}, std::nullopt, {}};
    Backbone<float> &net = result.model;
    std::ostringstream log;
    log << "fingerprint " << net.fingerprint() << '\n';

    if (cfg.ossa.enabled) {
        result.prototype = resolve_prototype(cfg, net, data);
        check_compatible(*result.prototype, net, std::span<const InsertionPoint>(cfg.ossa.layers));
        log << "prototype from " << result.prototype->meta.image_count << " image(s):";
        for (const auto &id : result.prototype->meta.image_ids) log << ' ' << id;
        log << '\n';
    }
    SeededRng batch_rng(derive_seed(cfg.seed, "batches"));
    SeededRng coin_rng(derive_seed(cfg.seed, "ossa-coin"));
    SeededRng noise_rng(derive_seed(cfg.seed, "ossa-noise"));

    const OptimizerConfig &opt = cfg.optimizer;
    const std::size_t n = data.source_train.size();
    const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = n;

    auto params = net.trainable_parameters();
    Tape<float> tape;
    std::vector<Image> batch_images(bs);
    std::vector<int> batch_labels(bs);
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    std::size_t applied = 0;

    for (int step = 0; step < opt.steps; ++step) {
        if (cursor + bs > n) {
            if (epoch_steps > 0) result.report.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));
            epoch_sum = 0.0;
            epoch_steps = 0;
            for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[batch_rng.below(i + 1)]);
            cursor = 0;
        }
        for (std::size_t b = 0; b < bs; ++b) {
            batch_images[b] = data.source_train.images[order[cursor + b]];
            batch_labels[b] = data.source_train.labels[order[cursor + b]];
        }
        cursor += bs;
        const Tensor4<float> x = to_batch<float>(std::span<const Image>(batch_images));

        Matrix<float> logits;
        if (cfg.ossa.enabled) {
            auto fw = forward_with_ossa(net, x, *result.prototype, cfg.ossa, coin_rng, noise_rng, &tape);
            logits = std::move(fw.logits);
            applied += fw.applied ? 1 : 0;
        } else {
            logits = net.forward_train(x, tape);
        }
        Matrix<float> grad;
        const double loss = nn::softmax_cross_entropy(logits, std::span<const int>(batch_labels), &grad);
        if (!std::isfinite(loss)) throw Error("train: non-finite loss at step " + std::to_string(step));

        net.zero_grad();
        net.backward(tape, grad);
        const double lr = step >= opt.effective_decay_step() ? opt.lr * opt.decay_factor : opt.lr;
        for (auto *p : params) {
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const float g = p->grad[i] + static_cast<float>(opt.weight_decay) * p->value[i];
                p->velocity[i] = static_cast<float>(opt.momentum) * p->velocity[i] + g;
                p->value[i] -= static_cast<float>(lr) * p->velocity[i];
            }
        }
        epoch_sum += loss;
        ++epoch_steps;
        if ((step + 1) % 100 == 0 || step + 1 == opt.steps) {
            log << "step " << step + 1 << " loss " << loss << " lr " << lr << '\n';
        }
    }
    if (epoch_steps > 0) result.report.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_steps));

    RunReport &r = result.report;
    r.config = cfg;
    r.seed = cfg.seed;
    r.steps = static_cast<std::size_t>(opt.steps);
    r.ossa_applied_steps = applied;
    r.source = evaluate(net, data.source_test);
    r.target = evaluate(net, data.target_test);
    if (result.prototype) r.prototype_image_ids = result.prototype->meta.image_ids;
    r.backbone_fingerprint = net.fingerprint();
    r.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    log << "source accuracy " << r.source.accuracy << " target accuracy " << r.target.accuracy << '\n';
    result.log = log.str();
    return result;
}

inline TrainResult train(const TrainConfig &cfg) { return train(cfg, TrainData::load(cfg.data)); }

/// report.json, model.json, train.log and (when used) prototype.json.
inline void write_run_outputs(const TrainResult &result, const std::filesystem::path &dir) {
    write_file_atomic(dir / "model.json", backbone_to_json(result.model).dump() + "\n");
    if (result.prototype) save_prototype(*result.prototype, dir / "prototype.json");
    write_file_atomic(dir / "train.log", result.log);
    write_file_atomic(dir / "report.json", run_report_to_json(result.report).dump(2) + "\n");
}

} // namespace ossa
