#pragma once

// Toy convolutional backbone with named insertion points.
//
//   image -> stem -> [post_stem] -> stage1 -> [post_stage1] -> stage2
//         -> [post_stage2] -> stage3 -> global average pool -> linear head
//
// Every block is a 3x3 convolution followed by ReLU; there is no batch
// normalization. The first `frozen_blocks` blocks (always including the stem)
// never receive updates, and the fingerprint covers exactly those weights.

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ossa/json_util.hpp"
#include "ossa/layers.hpp"
#include "ossa/rng.hpp"
#include "ossa/style_transform.hpp"

namespace ossa {

enum class InsertionPoint : std::size_t { PostStem = 0, PostStage1 = 1, PostStage2 = 2 };

inline constexpr std::size_t kNumInsertionPoints = 3;
inline constexpr std::size_t kNumBlocks = 4;
inline constexpr std::array<std::string_view, kNumInsertionPoints> kInsertionPointNames = {"post_stem", "post_stage1",
                                                                                           "post_stage2"};
inline constexpr std::array<std::string_view, kNumBlocks> kBlockNames = {"stem", "stage1", "stage2", "stage3"};

inline std::string_view name_of(InsertionPoint p) { return kInsertionPointNames[static_cast<std::size_t>(p)]; }

inline std::optional<InsertionPoint> parse_insertion_point(std::string_view name) {
    for (std::size_t i = 0; i < kNumInsertionPoints; ++i) {
        if (kInsertionPointNames[i] == name) return static_cast<InsertionPoint>(i);
    }
    return std::nullopt;
}

inline InsertionPoint require_insertion_point(std::string_view name) {
    auto p = parse_insertion_point(name);
    if (!p) {
        throw ValidationError("unknown layer name '" + std::string(name) +
                              "' (expected post_stem, post_stage1 or post_stage2)");
    }
    return *p;
}

struct ArchConfig {
    std::size_t in_channels = 3;
    std::size_t stem_channels = 16;
    std::array<std::size_t, 3> stage_channels = {48, 64, 96};
    std::array<std::size_t, 3> stage_strides = {2, 2, 2};
    std::size_t n_classes = 4;
    std::size_t frozen_blocks = 1;

    void validate() const {
        if (in_channels < 1) throw ValidationError("arch.in_channels must be >= 1");
        if (stem_channels < 1) throw ValidationError("arch.stem_channels must be >= 1");
        for (auto c : stage_channels) {
            if (c < 1) throw ValidationError("arch.stage_channels entries must be >= 1");
        }
        for (auto s : stage_strides) {
            if (s < 1 || s > 2) throw ValidationError("arch.stage_strides entries must be 1 or 2");
        }
        if (n_classes < 2) throw ValidationError("arch.n_classes must be >= 2");
        if (frozen_blocks < 1 || frozen_blocks >= kNumBlocks) {
            throw ValidationError("arch.frozen_blocks must be in [1, 3]");
        }
    }

    [[nodiscard]] std::size_t block_channels(std::size_t block) const {
        return block == 0 ? stem_channels : stage_channels[block - 1];
    }

    friend bool operator==(const ArchConfig &, const ArchConfig &) = default;
};

inline void to_json(json &j, const ArchConfig &a) {
    j = json{{"in_channels", a.in_channels},     {"stem_channels", a.stem_channels},
             {"stage_channels", a.stage_channels}, {"stage_strides", a.stage_strides},
             {"n_classes", a.n_classes},         {"frozen_blocks", a.frozen_blocks}};
}

inline ArchConfig arch_from_json(const json &j, std::string_view ctx = "arch") {
    detail::reject_unknown_keys(
        j, {"in_channels", "stem_channels", "stage_channels", "stage_strides", "n_classes", "frozen_blocks"}, ctx);
    ArchConfig a;
    a.in_channels = detail::get_or<std::size_t>(j, "in_channels", a.in_channels, ctx);
    a.stem_channels = detail::get_or<std::size_t>(j, "stem_channels", a.stem_channels, ctx);
    a.stage_channels = detail::get_or<std::array<std::size_t, 3>>(j, "stage_channels", a.stage_channels, ctx);
    a.stage_strides = detail::get_or<std::array<std::size_t, 3>>(j, "stage_strides", a.stage_strides, ctx);
    a.n_classes = detail::get_or<std::size_t>(j, "n_classes", a.n_classes, ctx);
    a.frozen_blocks = detail::get_or<std::size_t>(j, "frozen_blocks", a.frozen_blocks, ctx);
    a.validate();
    return a;
}

/// Style statistics to inject at each insertion point; null entries are
/// passed through untouched.
struct StylePlan {
    std::array<const ChannelStats *, kNumInsertionPoints> targets{};
    NoiseSpec noise{};
    double eps = kDefaultEps;
    /// Stream used for alpha/beta; only read when some target is set.
    SeededRng *rng = nullptr;

    [[nodiscard]] bool active() const {
        for (auto *t : targets) {
            if (t != nullptr) return true;
        }
        return false;
    }
};

/// Everything backward() needs from one forward pass.
template <typename T>
struct Tape {
    std::array<Shape4, kNumBlocks> in_shapes{};
    std::array<nn::RowMatrix<T>, kNumBlocks> cols{};
    std::array<Tensor4<T>, kNumBlocks> activations{};
    struct Styled {
        Tensor4<T> input;
        const ChannelStats *target = nullptr;
        Perturbation noise;
    };
    std::array<std::optional<Styled>, kNumInsertionPoints> styled{};
    Matrix<T> pooled;
    double eps = kDefaultEps;
};

template <typename T>
class Backbone {
  public:
    Backbone() = default;

    /// Deterministic initialization from `seed`.
    static Backbone build(const ArchConfig &arch, std::uint64_t seed) {
        arch.validate();
        Backbone net;
        net.arch_ = arch;
        net.init_seed_ = seed;
        std::size_t in = arch.in_channels;
        for (std::size_t i = 0; i < kNumBlocks; ++i) {
            nn::ConvGeometry g;
            g.in_channels = in;
            g.out_channels = arch.block_channels(i);
            g.stride = i == 0 ? 1 : arch.stage_strides[i - 1];
            net.blocks_[i] = nn::Conv2d<T>(std::string(kBlockNames[i]), g);
            in = g.out_channels;
        }
        net.head_ = nn::Linear<T>("head", in, arch.n_classes);
        SeededRng rng(derive_seed(seed, "backbone-init"));
        for (auto &b : net.blocks_) b.initialize(rng);
        net.head_.initialize(rng);
        return net;
    }

    [[nodiscard]] const ArchConfig &arch() const noexcept { return arch_; }
    [[nodiscard]] std::uint64_t init_seed() const noexcept { return init_seed_; }

    [[nodiscard]] std::size_t channels_at(InsertionPoint p) const {
        return arch_.block_channels(static_cast<std::size_t>(p));
    }

    [[nodiscard]] Shape4 shape_at(InsertionPoint p, const Shape4 &input) const {
        Shape4 s = input;
        for (std::size_t i = 0; i <= static_cast<std::size_t>(p); ++i) s = blocks_[i].output_shape(s);
        return s;
    }

    /// Activations as they leave the insertion point (plain forward).
    [[nodiscard]] Tensor4<T> forward_to(const Tensor4<T> &x, InsertionPoint p) const {
        check_input(x);
        Tensor4<T> h = x;
        for (std::size_t i = 0; i <= static_cast<std::size_t>(p); ++i) {
            h = blocks_[i].forward(h);
            nn::relu_inplace(h);
        }
        return h;
    }

    /// Logits (B x n_classes). With a plan, styles are injected on the way.
    [[nodiscard]] Matrix<T> forward(const Tensor4<T> &x, const StylePlan *plan = nullptr) const {
        check_input(x);
        Tensor4<T> h = x;
        for (std::size_t i = 0; i < kNumBlocks; ++i) {
            h = blocks_[i].forward(h);
            nn::relu_inplace(h);
            if (i < kNumInsertionPoints && plan != nullptr && plan->targets[i] != nullptr) {
                Perturbation p = draw(*plan, h.shape());
                h = ossa_with(h, *plan->targets[i], p, plan->eps);
            }
        }
        return head_.forward(nn::global_avg_pool(h));
    }

    /// Forward pass that records what backward() needs.
    [[nodiscard]] Matrix<T> forward_train(const Tensor4<T> &x, Tape<T> &tape, const StylePlan *plan = nullptr) const {
        check_input(x);
        tape = Tape<T>{};
        tape.eps = plan != nullptr ? plan->eps : kDefaultEps;
        const std::size_t first = arch_.frozen_blocks;
        Tensor4<T> h = x;
        for (std::size_t i = 0; i < kNumBlocks; ++i) {
            tape.in_shapes[i] = h.shape();
            Tensor4<T> out;
            if (i >= first) {
                tape.cols[i] = blocks_[i].im2col(h);
                out = blocks_[i].forward_cols(tape.cols[i], h.shape());
            } else {
                out = blocks_[i].forward(h);
            }
            nn::relu_inplace(out);
            if (i < kNumInsertionPoints && plan != nullptr && plan->targets[i] != nullptr) {
                Perturbation p = draw(*plan, out.shape());
                Tensor4<T> styled = ossa_with(out, *plan->targets[i], p, plan->eps);
                if (i >= first) tape.styled[i] = typename Tape<T>::Styled{out, plan->targets[i], std::move(p)};
                if (i >= first) tape.activations[i] = std::move(out);
                h = std::move(styled);
            } else {
                if (i >= first) tape.activations[i] = out;
                h = std::move(out);
            }
        }
        tape.pooled = nn::global_avg_pool(h);
        return head_.forward(tape.pooled);
    }

    /// Accumulates gradients of all trainable parameters.
    void backward(const Tape<T> &tape, const Matrix<T> &grad_logits) {
        Matrix<T> g_pooled = head_.backward(tape.pooled, grad_logits);
        const Shape4 last = blocks_[kNumBlocks - 1].output_shape(tape.in_shapes[kNumBlocks - 1]);
        Tensor4<T> g = nn::global_avg_pool_backward(last, g_pooled);
        const std::size_t first = arch_.frozen_blocks;
        for (std::size_t i = kNumBlocks; i-- > first;) {
            if (i < kNumInsertionPoints && tape.styled[i]) {
                const auto &s = *tape.styled[i];
                g = ossa_backward(s.input, *s.target, s.noise, g, tape.eps);
            }
            nn::relu_backward_inplace(tape.activations[i], g);
            g = blocks_[i].backward(tape.cols[i], tape.in_shapes[i], g, true, i > first);
        }
    }

    void zero_grad() {
        for (auto *p : trainable_parameters()) p->zero_grad();
    }

    [[nodiscard]] std::vector<nn::Parameter<T> *> parameters() {
        std::vector<nn::Parameter<T> *> out;
        for (auto &b : blocks_) {
            out.push_back(&b.weight());
            out.push_back(&b.bias());
        }
        out.push_back(&head_.weight());
        out.push_back(&head_.bias());
        return out;
    }

    [[nodiscard]] std::vector<const nn::Parameter<T> *> parameters() const {
        std::vector<const nn::Parameter<T> *> out;
        for (const auto &b : blocks_) {
            out.push_back(&b.weight());
            out.push_back(&b.bias());
        }
        out.push_back(&head_.weight());
        out.push_back(&head_.bias());
        return out;
    }

    [[nodiscard]] std::vector<nn::Parameter<T> *> trainable_parameters() {
        std::vector<nn::Parameter<T> *> out;
        for (std::size_t i = arch_.frozen_blocks; i < kNumBlocks; ++i) {
            out.push_back(&blocks_[i].weight());
            out.push_back(&blocks_[i].bias());
        }
        out.push_back(&head_.weight());
        out.push_back(&head_.bias());
        return out;
    }

    [[nodiscard]] std::vector<const nn::Parameter<T> *> frozen_parameters() const {
        std::vector<const nn::Parameter<T> *> out;
        for (std::size_t i = 0; i < arch_.frozen_blocks; ++i) {
            out.push_back(&blocks_[i].weight());
            out.push_back(&blocks_[i].bias());
        }
        return out;
    }

    /// 64-bit FNV-1a over the architecture and the frozen weights, rounded
    /// to float so float and double builds of the same seed agree.
    [[nodiscard]] std::string fingerprint() const {
        std::uint64_t h = fnv1a("ossa-backbone-v1");
        auto mix = [&h](const void *p, std::size_t n) {
            h = fnv1a(std::string_view(static_cast<const char *>(p), n), h);
        };
        const std::array<std::uint64_t, 9> dims = {
            arch_.in_channels,       arch_.stem_channels,     arch_.stage_channels[0],
            arch_.stage_channels[1], arch_.stage_channels[2], arch_.stage_strides[0],
            arch_.stage_strides[1],  arch_.stage_strides[2],  arch_.frozen_blocks};
        mix(dims.data(), sizeof(dims));
        for (const auto *p : frozen_parameters()) {
            for (T v : p->value) {
                const float f = static_cast<float>(v);
                mix(&f, sizeof f);
            }
        }
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }

    [[nodiscard]] nn::Conv2d<T> &block(std::size_t i) { return blocks_.at(i); }
    [[nodiscard]] const nn::Conv2d<T> &block(std::size_t i) const { return blocks_.at(i); }
    [[nodiscard]] nn::Linear<T> &head() noexcept { return head_; }

  private:
    void check_input(const Tensor4<T> &x) const {
        require_valid(x, "backbone forward");
        if (x.shape().channels != arch_.in_channels) {
            throw ShapeMismatch("backbone forward: expected " + std::to_string(arch_.in_channels) +
                                " input channels, got " + std::to_string(x.shape().channels));
        }
    }

    static Perturbation draw(const StylePlan &plan, const Shape4 &s) {
        if (plan.rng == nullptr) {
            if (plan.noise.std != 0.0) throw InvalidInput("StylePlan: noise requested without an RNG stream");
            return Perturbation{ChannelMatrix(s.batch, s.channels, 1.0), ChannelMatrix(s.batch, s.channels, 1.0)};
        }
        return sample_perturbation(*plan.rng, plan.noise, s.batch, s.channels);
    }

    ArchConfig arch_{};
    std::uint64_t init_seed_ = 0;
    std::array<nn::Conv2d<T>, kNumBlocks> blocks_{};
    nn::Linear<T> head_{};
};

// Model files: {"format": "ossa-backbone", "version": 1, "arch": {...},
// "init_seed": n, "parameters": {name: [values...]}}

template <typename T>
json backbone_to_json(const Backbone<T> &net) {
    json params = json::object();
    for (const auto *p : net.parameters()) {
        json values = json::array();
        for (T v : p->value) values.push_back(static_cast<double>(v));
        params[p->name] = std::move(values);
    }
    return json{{"format", "ossa-backbone"},
                {"version", 1},
                {"arch", net.arch()},
                {"init_seed", net.init_seed()},
                {"fingerprint", net.fingerprint()},
                {"parameters", std::move(params)}};
}

/// Rebuilds from the seed, then overwrites with the stored parameters (if any).
template <typename T>
Backbone<T> backbone_from_json(const json &j) {
    detail::reject_unknown_keys(j, {"format", "version", "arch", "init_seed", "fingerprint", "parameters"}, "model");
    if (detail::get_required<std::string>(j, "format", "model") != "ossa-backbone") {
        throw ValidationError("model.format: expected 'ossa-backbone'");
    }
    if (detail::get_required<int>(j, "version", "model") != 1) throw ValidationError("model.version: unsupported");
    const ArchConfig arch = arch_from_json(j.at("arch"), "model.arch");
    auto net = Backbone<T>::build(arch, detail::get_required<std::uint64_t>(j, "init_seed", "model"));
    if (auto it = j.find("parameters"); it != j.end()) {
        detail::require_object(*it, "model.parameters");
        for (auto *p : net.parameters()) {
            auto pj = it->find(p->name);
            if (pj == it->end()) throw ValidationError("model.parameters: missing '" + p->name + "'");
            if (!pj->is_array() || pj->size() != p->value.size()) {
                throw ValidationError("model.parameters." + p->name + ": expected " +
                                      std::to_string(p->value.size()) + " values");
            }
            for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = static_cast<T>((*pj)[i].template get<double>());
        }
    }
    if (auto it = j.find("fingerprint"); it != j.end() && it->get<std::string>() != net.fingerprint()) {
        throw FingerprintMismatch("model: stored fingerprint does not match the frozen weights");
    }
    return net;
}

} // namespace ossa
