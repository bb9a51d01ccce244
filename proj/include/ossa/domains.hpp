#pragma once

// Procedural source/target image domains.
//
// Content (background texture, shape type, geometry, colors) is a pure
// function of (seed, image index, size); the class label is the shape type.
// Style (contrast, color shift, fog blend, blur) is applied afterwards, so
// two specs that differ only in style produce pixel-aligned pairs with
// identical labels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ossa/image.hpp"
#include "ossa/io.hpp"
#include "ossa/json_util.hpp"
#include "ossa/rng.hpp"

namespace ossa {

using Rgb = std::array<double, 3>;

struct StyleSpec {
    double fog_intensity = 0.0;
    Rgb fog_color = {0.78, 0.78, 0.82};
    double contrast = 1.0;
    Rgb color_shift = {0.0, 0.0, 0.0};
    int blur_radius = 0;

    void validate(std::string_view ctx = "style") const {
        const std::string c(ctx);
        if (!(fog_intensity >= 0.0 && fog_intensity <= 1.0)) throw ValidationError(c + ".fog_intensity must be in [0, 1]");
        for (double v : fog_color) {
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(c + ".fog_color entries must be in [0, 1]");
        }
        if (!(contrast > 0.0) || !std::isfinite(contrast)) throw ValidationError(c + ".contrast must be > 0");
        for (double v : color_shift) {
            if (!std::isfinite(v)) throw ValidationError(c + ".color_shift entries must be finite");
        }
        if (blur_radius < 0 || blur_radius > 8) throw ValidationError(c + ".blur_radius must be in [0, 8]");
    }

    friend bool operator==(const StyleSpec &, const StyleSpec &) = default;
};

inline constexpr int kMaxShapeClasses = 5;

struct DomainSpec {
    int n_classes = 4;
    int height = 24;
    int width = 24;
    int samples_per_class = 100;
    StyleSpec style{};
    std::uint64_t seed = 0;

    void validate(std::string_view ctx = "domain") const {
        const std::string c(ctx);
        if (n_classes < 2 || n_classes > kMaxShapeClasses) {
            throw ValidationError(c + ".n_classes must be in [2, " + std::to_string(kMaxShapeClasses) + "]");
        }
        if (height < 8 || width < 8 || height > 512 || width > 512) {
            throw ValidationError(c + ".height/width must be in [8, 512]");
        }
        if (samples_per_class < 1) throw ValidationError(c + ".samples_per_class must be >= 1");
        style.validate(c + ".style");
    }

    [[nodiscard]] std::size_t size() const {
        return static_cast<std::size_t>(n_classes) * static_cast<std::size_t>(samples_per_class);
    }

    friend bool operator==(const DomainSpec &, const DomainSpec &) = default;
};

inline void to_json(json &j, const StyleSpec &s) {
    j = json{{"fog_intensity", s.fog_intensity}, {"fog_color", s.fog_color}, {"contrast", s.contrast},
             {"color_shift", s.color_shift},     {"blur_radius", s.blur_radius}};
}

inline void to_json(json &j, const DomainSpec &d) {
    j = json{{"n_classes", d.n_classes},
             {"height", d.height},
             {"width", d.width},
             {"samples_per_class", d.samples_per_class},
             {"style", d.style},
             {"seed", d.seed}};
}

inline StyleSpec style_from_json(const json &j, std::string_view ctx) {
    detail::reject_unknown_keys(j, {"fog_intensity", "fog_color", "contrast", "color_shift", "blur_radius"}, ctx);
    StyleSpec s;
    s.fog_intensity = detail::get_or<double>(j, "fog_intensity", s.fog_intensity, ctx);
    s.fog_color = detail::get_or<Rgb>(j, "fog_color", s.fog_color, ctx);
    s.contrast = detail::get_or<double>(j, "contrast", s.contrast, ctx);
    s.color_shift = detail::get_or<Rgb>(j, "color_shift", s.color_shift, ctx);
    s.blur_radius = detail::get_or<int>(j, "blur_radius", s.blur_radius, ctx);
    s.validate(ctx);
    return s;
}

inline DomainSpec domain_from_json(const json &j, std::string_view ctx = "domain") {
    detail::reject_unknown_keys(j, {"n_classes", "height", "width", "samples_per_class", "style", "seed"}, ctx);
    DomainSpec d;
    d.n_classes = detail::get_or<int>(j, "n_classes", d.n_classes, ctx);
    d.height = detail::get_or<int>(j, "height", d.height, ctx);
    d.width = detail::get_or<int>(j, "width", d.width, ctx);
    d.samples_per_class = detail::get_or<int>(j, "samples_per_class", d.samples_per_class, ctx);
    if (auto it = j.find("style"); it != j.end()) d.style = style_from_json(*it, detail::join_path(ctx, "style"));
    d.seed = detail::get_or<std::uint64_t>(j, "seed", d.seed, ctx);
    d.validate(ctx);
    return d;
}

struct Dataset {
    std::vector<Image> images;
    std::vector<int> labels;
    std::vector<std::string> ids;
    int n_classes = 0;

    [[nodiscard]] std::size_t size() const noexcept { return images.size(); }
};

/// Box blur with clamped borders, per channel.
inline Image box_blur(const Image &img, int radius) {
    if (radius <= 0) return img;
    Image tmp = img;
    Image out = img;
    const long H = static_cast<long>(img.height);
    const long W = static_cast<long>(img.width);
    const double norm = 1.0 / static_cast<double>(2 * radius + 1);
    for (std::size_t c = 0; c < img.channels; ++c) {
        for (long y = 0; y < H; ++y) {
            for (long x = 0; x < W; ++x) {
                double s = 0.0;
                for (long d = -radius; d <= radius; ++d) {
                    s += img.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(std::clamp(x + d, 0L, W - 1)));
                }
                tmp.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(s * norm);
            }
        }
        for (long y = 0; y < H; ++y) {
            for (long x = 0; x < W; ++x) {
                double s = 0.0;
                for (long d = -radius; d <= radius; ++d) {
                    s += tmp.at(c, static_cast<std::size_t>(std::clamp(y + d, 0L, H - 1)), static_cast<std::size_t>(x));
                }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(s * norm);
            }
        }
    }
    return out;
}

/// Convex blend towards the fog color, out = (1 - t) * image + t * fog,
/// followed by a box blur of `blur_radius` and clipping to [0, 1].
inline Image apply_fog(const Image &image, double t, const Rgb &fog_color, int blur_radius = 0) {
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidInput("apply_fog: t must be in [0, 1], got " + std::to_string(t));
    if (image.channels != 3) throw InvalidInput("apply_fog: expected an RGB image");
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            float &v = out.data[c * plane + i];
            v = static_cast<float>((1.0 - t) * static_cast<double>(v) + t * fog_color[c]);
        }
    }
    out = box_blur(out, blur_radius);
    for (float &v : out.data) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

/// Contrast about mid-gray, then color shift, then fog; quantized to 8 bits.
inline Image apply_style(const Image &image, const StyleSpec &style) {
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::size_t i = 0; i < plane; ++i) {
            float &v = out.data[c * plane + i];
            const double s = style.contrast * (static_cast<double>(v) - 0.5) + 0.5 + style.color_shift[c];
            v = static_cast<float>(std::clamp(s, 0.0, 1.0));
        }
    }
    out = apply_fog(out, style.fog_intensity, style.fog_color, style.blur_radius);
    quantize_8bit(out);
    return out;
}

namespace detail {

inline double luminance(const Rgb &c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

/// Is (u, v), in shape-local coordinates scaled by the radius, inside shape `kind`?
inline bool inside_shape(int kind, double u, double v) {
    const double r2 = u * u + v * v;
    switch (kind) {
    case 0: // disk
        return r2 <= 1.0;
    case 1: // square
        return std::abs(u) <= 0.8 && std::abs(v) <= 0.8;
    case 2: { // equilateral triangle inscribed in the unit circle, apex at -v
        const double s3 = std::numbers::sqrt3;
        return v <= 0.5 && s3 * u - v <= 1.0 && -s3 * u - v <= 1.0;
    }
    case 3: // plus sign
        return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4: // ring
        return r2 <= 1.0 && r2 >= 0.36;
    default:
        return false;
    }
}

} // namespace detail

/// Style-free content of image `index`: textured background plus one shape
/// whose type is the label.
inline Image render_content(const DomainSpec &spec, std::size_t index) {
    const int label = static_cast<int>(index % static_cast<std::size_t>(spec.n_classes));
    SeededRng rng(derive_seed(derive_seed(spec.seed, "content"), index));
    const std::size_t H = static_cast<std::size_t>(spec.height);
    const std::size_t W = static_cast<std::size_t>(spec.width);

    Rgb bg{};
    for (double &c : bg) c = rng.uniform(0.15, 0.85);
    Rgb tex_amp{};
    for (double &a : tex_amp) a = rng.uniform(0.04, 0.14);
    const double freq = rng.uniform(0.25, 0.9);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

    Rgb fg{};
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (double &c : fg) c = rng.uniform(0.0, 1.0);
        if (std::abs(detail::luminance(fg) - detail::luminance(bg)) >= 0.25) break;
    }

    const double extent = static_cast<double>(std::min(H, W));
    const double radius = rng.uniform(0.24, 0.36) * extent;
    const double cx = rng.uniform(radius + 1.0, static_cast<double>(W) - radius - 1.0);
    const double cy = rng.uniform(radius + 1.0, static_cast<double>(H) - radius - 1.0);
    const double rot = rng.uniform(-0.3, 0.3);
    const double cr = std::cos(rot);
    const double sr = std::sin(rot);

    Image img(3, H, W);
    constexpr int kSuper = 3;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            int hits = 0;
            for (int sy = 0; sy < kSuper; ++sy) {
                for (int sx = 0; sx < kSuper; ++sx) {
                    const double px = static_cast<double>(x) + (sx + 0.5) / kSuper - cx;
                    const double py = static_cast<double>(y) + (sy + 0.5) / kSuper - cy;
                    const double u = (cr * px + sr * py) / radius;
                    const double v = (-sr * px + cr * py) / radius;
                    hits += detail::inside_shape(label, u, v) ? 1 : 0;
                }
            }
            const double cover = static_cast<double>(hits) / (kSuper * kSuper);
            const double wave = std::sin(freq * (std::cos(theta) * static_cast<double>(x) +
                                                 std::sin(theta) * static_cast<double>(y)) +
                                         phase);
            for (std::size_t c = 0; c < 3; ++c) {
                const double back = bg[c] + tex_amp[c] * wave + rng.uniform(-0.03, 0.03);
                img.at(c, y, x) = static_cast<float>(std::clamp((1.0 - cover) * back + cover * fg[c], 0.0, 1.0));
            }
        }
    }
    return img;
}

inline std::string image_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%05zu", index);
    return buf;
}

/// Deterministic in `spec`; images are produced in parallel but stored by index.
inline Dataset generate_dataset(const DomainSpec &spec) {
    spec.validate();
    const std::size_t n = spec.size();
    Dataset ds;
    ds.n_classes = spec.n_classes;
    ds.images.resize(n);
    ds.labels.resize(n);
    ds.ids.resize(n);
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < n; i += step) {
            ds.images[i] = apply_style(render_content(spec, i), spec.style);
            ds.labels[i] = static_cast<int>(i % static_cast<std::size_t>(spec.n_classes));
            ds.ids[i] = image_id(i);
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
    if (workers == 1 || n < 64) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    }
    return ds;
}

inline constexpr std::string_view kManifestName = "manifest.tsv";
inline constexpr std::string_view kManifestHeader = "# ossa-dataset v1: <relative png path>\\t<integer label>";

/// Writes images/NNNNN.png plus manifest.tsv. The manifest is written last
/// and atomically, so a directory with a manifest is complete.
inline void write_dataset(const Dataset &ds, const std::filesystem::path &dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    std::ostringstream manifest;
    manifest << kManifestHeader << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const std::string rel = "images/" + ds.ids[i] + ".png";
        write_png(dir / rel, ds.images[i]);
        manifest << rel << '\t' << ds.labels[i] << '\n';
    }
    write_file_atomic(dir / kManifestName, manifest.str());
}

/// Reads a dataset directory; any manifest following the same two-column
/// schema works, whatever produced the images.
inline Dataset read_dataset(const std::filesystem::path &dir) {
    std::ifstream in(dir / kManifestName);
    if (!in) throw IoError("read_dataset: missing manifest in " + dir.string());
    Dataset ds;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ValidationError("read_dataset: manifest line " + std::to_string(lineno) + " has no tab");
        }
        const std::string rel = line.substr(0, tab);
        int label = 0;
        try {
            std::size_t used = 0;
            label = std::stoi(line.substr(tab + 1), &used);
        } catch (const std::exception &) {
            throw ValidationError("read_dataset: bad label on manifest line " + std::to_string(lineno));
        }
        if (label < 0) throw ValidationError("read_dataset: negative label on line " + std::to_string(lineno));
        ds.images.push_back(read_png(dir / rel));
        ds.labels.push_back(label);
        ds.ids.push_back(std::filesystem::path(rel).stem().string());
        ds.n_classes = std::max(ds.n_classes, label + 1);
    }
    if (ds.images.empty()) throw ValidationError("read_dataset: empty manifest in " + dir.string());
    return ds;
}

} // namespace ossa
