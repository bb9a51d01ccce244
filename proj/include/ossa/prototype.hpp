#pragma once

// Target-domain style prototypes: per-layer channel statistics measured once
// on one (or a few) unlabeled target images by the frozen part of the backbone.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ossa/backbone.hpp"
#include "ossa/image.hpp"
#include "ossa/io.hpp"
#include "ossa/json_util.hpp"
#include "ossa/stats.hpp"

namespace ossa {

inline constexpr int kPrototypeSchemaVersion = 1;

struct PrototypeMeta {
    std::vector<std::string> image_ids;
    std::string backbone_fingerprint;
    std::uint64_t seed = 0;
    std::string created_at;
    std::size_t image_count = 0;

    friend bool operator==(const PrototypeMeta &, const PrototypeMeta &) = default;
};

struct StylePrototype {
    /// Layer name -> statistics with a single row (B = 1).
    std::map<std::string, ChannelStats> layers;
    PrototypeMeta meta;

    [[nodiscard]] const ChannelStats &at(InsertionPoint p) const {
        auto it = layers.find(std::string(name_of(p)));
        if (it == layers.end()) {
            throw ValidationError("prototype has no statistics for layer '" + std::string(name_of(p)) + "'");
        }
        return it->second;
    }

    /// Layer names are insertion points, stats are single-row, sigma >= 0.
    void validate() const {
        if (layers.empty()) throw ValidationError("prototype: no layers");
        for (const auto &[name, st] : layers) {
            require_insertion_point(name);
            try {
                st.validate();
            } catch (const Error &e) {
                throw ValidationError("prototype layer '" + name + "': " + e.what());
            }
            if (st.batch() != 1) throw ValidationError("prototype layer '" + name + "': expected a single row");
        }
        if (meta.backbone_fingerprint.empty()) throw ValidationError("prototype: backbone fingerprint absent");
        if (meta.image_count < 1) throw ValidationError("prototype: image_count must be >= 1");
    }

    friend bool operator==(const StylePrototype &, const StylePrototype &) = default;
};

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Throws unless `proto` was measured with this backbone's frozen weights and
/// covers every layer in `layers` with the right channel count.
template <typename T>
void check_compatible(const StylePrototype &proto, const Backbone<T> &net, std::span<const InsertionPoint> layers) {
    const std::string fp = net.fingerprint();
    if (proto.meta.backbone_fingerprint != fp) {
        throw FingerprintMismatch("prototype fingerprint " + proto.meta.backbone_fingerprint +
                                  " does not match backbone " + fp);
    }
    for (InsertionPoint p : layers) {
        const ChannelStats &st = proto.at(p);
        if (st.channels() != net.channels_at(p)) {
            throw ShapeMismatch("prototype layer '" + std::string(name_of(p)) + "' has " +
                                std::to_string(st.channels()) + " channels, backbone has " +
                                std::to_string(net.channels_at(p)));
        }
    }
}

/// Runs every image up to each requested layer, takes its channel statistics
/// and averages mu and sigma over the images. Never modifies the backbone.
template <typename T>
StylePrototype extract_prototype(const Backbone<T> &net, std::span<const Image> images,
                                 std::span<const std::string> image_ids, std::span<const InsertionPoint> layers,
                                 double eps = kDefaultEps, std::uint64_t seed = 0) {
    if (images.empty()) throw InvalidInput("extract_prototype: empty image list");
    if (layers.empty()) throw InvalidInput("extract_prototype: no layers requested");
    if (!image_ids.empty() && image_ids.size() != images.size()) {
        throw InvalidInput("extract_prototype: image id count does not match image count");
    }
    StylePrototype proto;
    const double k = static_cast<double>(images.size());
    constexpr std::size_t kChunk = 64;
    for (InsertionPoint p : layers) {
        const std::size_t C = net.channels_at(p);
        ChannelMatrix mu_sum(1, C);
        ChannelMatrix sigma_sum(1, C);
        for (std::size_t begin = 0; begin < images.size(); begin += kChunk) {
            const auto chunk = images.subspan(begin, std::min(kChunk, images.size() - begin));
            const ChannelStats st = channel_stats(net.forward_to(to_batch<T>(chunk), p), eps);
            for (std::size_t b = 0; b < st.batch(); ++b) {
                for (std::size_t c = 0; c < C; ++c) {
                    mu_sum(0, c) += st.mu(b, c);
                    sigma_sum(0, c) += st.sigma(b, c);
                }
            }
        }
        for (double &v : mu_sum.data()) v /= k;
        for (double &v : sigma_sum.data()) v /= k;
        proto.layers[std::string(name_of(p))] = ChannelStats{std::move(mu_sum), std::move(sigma_sum)};
    }
    proto.meta.image_ids.assign(image_ids.begin(), image_ids.end());
    if (proto.meta.image_ids.empty()) {
        for (std::size_t i = 0; i < images.size(); ++i) proto.meta.image_ids.push_back(std::to_string(i));
    }
    proto.meta.backbone_fingerprint = net.fingerprint();
    proto.meta.seed = seed;
    proto.meta.created_at = utc_timestamp();
    proto.meta.image_count = images.size();
    return proto;
}

/// Decodes the PNG files and extracts; ids are the file paths as given.
template <typename T>
StylePrototype extract_prototype_from_files(const Backbone<T> &net, std::span<const std::filesystem::path> paths,
                                            std::span<const InsertionPoint> layers, double eps = kDefaultEps,
                                            std::uint64_t seed = 0) {
    if (paths.empty()) throw InvalidInput("extract_prototype: empty image list");
    std::vector<Image> images;
    std::vector<std::string> ids;
    for (const auto &p : paths) {
        images.push_back(read_png(p));
        ids.push_back(p.string());
    }
    return extract_prototype(net, std::span<const Image>(images), std::span<const std::string>(ids), layers, eps,
                             seed);
}

/// Elementwise mean of mu and of sigma; image counts and ids are concatenated.
inline StylePrototype average_prototypes(std::span<const StylePrototype> protos) {
    if (protos.empty()) throw InvalidInput("average_prototypes: empty list");
    if (protos.size() == 1) return protos.front();
    const StylePrototype &first = protos.front();
    StylePrototype out;
    out.meta.backbone_fingerprint = first.meta.backbone_fingerprint;
    out.meta.seed = first.meta.seed;
    out.meta.created_at = utc_timestamp();
    for (const auto &p : protos) {
        if (p.meta.backbone_fingerprint != first.meta.backbone_fingerprint) {
            throw FingerprintMismatch("average_prototypes: prototypes come from different backbones");
        }
        if (p.layers.size() != first.layers.size()) {
            throw ShapeMismatch("average_prototypes: prototypes cover different layers");
        }
        out.meta.image_count += p.meta.image_count;
        out.meta.image_ids.insert(out.meta.image_ids.end(), p.meta.image_ids.begin(), p.meta.image_ids.end());
    }
    const double n = static_cast<double>(protos.size());
    for (const auto &[name, st0] : first.layers) {
        ChannelMatrix mu(1, st0.channels());
        ChannelMatrix sigma(1, st0.channels());
        for (const auto &p : protos) {
            auto it = p.layers.find(name);
            if (it == p.layers.end()) throw ShapeMismatch("average_prototypes: layer '" + name + "' missing");
            if (it->second.channels() != st0.channels() || it->second.batch() != 1) {
                throw ShapeMismatch("average_prototypes: layer '" + name + "' shapes differ");
            }
            for (std::size_t c = 0; c < st0.channels(); ++c) {
                mu(0, c) += it->second.mu(0, c);
                sigma(0, c) += it->second.sigma(0, c);
            }
        }
        for (double &v : mu.data()) v /= n;
        for (double &v : sigma.data()) v /= n;
        out.layers[name] = ChannelStats{std::move(mu), std::move(sigma)};
    }
    return out;
}

// File schema v1:
// {"schema_version": 1, "backbone_fingerprint": "<hex>", "image_ids": [...],
//  "image_count": K, "seed": n, "created_at": "<UTC ISO-8601>" (optional),
//  "layers": {"<layer>": {"mu": [C floats], "sigma": [C floats]}}}

inline json prototype_to_json(const StylePrototype &p) {
    json layers = json::object();
    for (const auto &[name, st] : p.layers) {
        layers[name] = json{{"mu", std::vector<double>(st.mu.data().begin(), st.mu.data().end())},
                            {"sigma", std::vector<double>(st.sigma.data().begin(), st.sigma.data().end())}};
    }
    json j{{"schema_version", kPrototypeSchemaVersion},
           {"backbone_fingerprint", p.meta.backbone_fingerprint},
           {"image_ids", p.meta.image_ids},
           {"image_count", p.meta.image_count},
           {"seed", p.meta.seed},
           {"layers", std::move(layers)}};
    if (!p.meta.created_at.empty()) j["created_at"] = p.meta.created_at;
    return j;
}

inline StylePrototype prototype_from_json(const json &j) {
    constexpr std::string_view ctx = "prototype";
    detail::reject_unknown_keys(
        j, {"schema_version", "backbone_fingerprint", "image_ids", "image_count", "seed", "created_at", "layers"}, ctx);
    const int version = detail::get_required<int>(j, "schema_version", ctx);
    if (version != kPrototypeSchemaVersion) {
        throw ValidationError("prototype.schema_version: unsupported version " + std::to_string(version));
    }
    StylePrototype p;
    if (!j.contains("backbone_fingerprint")) throw ValidationError("prototype.backbone_fingerprint: absent");
    p.meta.backbone_fingerprint = detail::get_required<std::string>(j, "backbone_fingerprint", ctx);
    p.meta.image_ids = detail::get_required<std::vector<std::string>>(j, "image_ids", ctx);
    p.meta.image_count = detail::get_required<std::size_t>(j, "image_count", ctx);
    p.meta.seed = detail::get_required<std::uint64_t>(j, "seed", ctx);
    p.meta.created_at = detail::get_or<std::string>(j, "created_at", "", ctx);
    const json layers = detail::get_required<json>(j, "layers", ctx);
    detail::require_object(layers, "prototype.layers");
    for (const auto &[name, lj] : layers.items()) {
        const std::string lctx = "prototype.layers." + name;
        detail::reject_unknown_keys(lj, {"mu", "sigma"}, lctx);
        auto mu = detail::get_required<std::vector<double>>(lj, "mu", lctx);
        auto sigma = detail::get_required<std::vector<double>>(lj, "sigma", lctx);
        if (mu.size() != sigma.size() || mu.empty()) throw ValidationError(lctx + ": mu/sigma lengths differ or are empty");
        const std::size_t C = mu.size();
        p.layers[name] = ChannelStats{ChannelMatrix(1, C, std::move(mu)), ChannelMatrix(1, C, std::move(sigma))};
    }
    p.validate();
    return p;
}

inline void save_prototype(const StylePrototype &p, const std::filesystem::path &path) {
    p.validate();
    write_file_atomic(path, prototype_to_json(p).dump(2) + "\n");
}

inline StylePrototype load_prototype(const std::filesystem::path &path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error &e) {
        throw ValidationError("prototype file " + path.string() + " is corrupted: " + e.what());
    }
    return prototype_from_json(j);
}

} // namespace ossa
