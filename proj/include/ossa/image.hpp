#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ossa/error.hpp"
#include "ossa/tensor.hpp"

namespace ossa {

/// Planar (CHW) image with values in [0, 1].
struct Image {
    std::size_t channels = 3;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> data;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), data(c * h * w, fill) {}

    float &at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

    friend bool operator==(const Image &, const Image &) = default;
};

/// Rounds every value to the nearest multiple of 1/255, i.e. what an 8-bit
/// file can store exactly.
inline void quantize_8bit(Image &img) {
    for (float &v : img.data) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

/// Network input value of a [0, 1] pixel: centered on zero, range [-1, 1].
constexpr float pixel_to_input(float v) noexcept { return 2.0f * v - 1.0f; }

/// Stacks same-sized images into a (B, C, H, W) batch of network inputs.
template <typename T>
Tensor4<T> to_batch(std::span<const Image> images) {
    if (images.empty()) throw InvalidInput("to_batch: no images");
    const Image &f = images.front();
    Tensor4<T> out(Shape4{images.size(), f.channels, f.height, f.width});
    auto dst = out.data();
    std::size_t k = 0;
    for (const Image &img : images) {
        if (img.channels != f.channels || img.height != f.height || img.width != f.width) {
            throw ShapeMismatch("to_batch: images differ in size");
        }
        for (float v : img.data) dst[k++] = static_cast<T>(pixel_to_input(v));
    }
    return out;
}

template <typename T>
Tensor4<T> to_batch(const Image &image) {
    return to_batch<T>(std::span<const Image>(&image, 1));
}

namespace detail {

struct FileCloser {
    void operator()(std::FILE *f) const noexcept {
        if (f != nullptr) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

} // namespace detail

/// Writes an 8-bit RGB (or grayscale) PNG.
inline void write_png(const std::filesystem::path &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3) throw InvalidInput("write_png: only 1 or 3 channels supported");
    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("write_png: cannot open " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: libpng initialization failed");
    }
    std::vector<png_byte> rows(img.height * img.width * img.channels);
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < img.channels; ++c) {
                rows[(y * img.width + x) * img.channels + c] =
                    static_cast<png_byte>(std::lround(std::clamp(img.at(c, y, x), 0.0f, 1.0f) * 255.0f));
            }
        }
    }
    std::vector<png_bytep> row_ptrs(img.height);
    for (std::size_t y = 0; y < img.height; ++y) row_ptrs[y] = rows.data() + y * img.width * img.channels;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("write_png: encoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as 8-bit RGB.
inline Image read_png(const std::filesystem::path &path) {
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("read_png: cannot open " + path.string());
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw IoError("read_png: not a PNG file: " + path.string());
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png != nullptr ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: libpng initialization failed");
    }
    std::vector<png_byte> rows;
    std::vector<png_bytep> row_ptrs;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: decoding failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const png_byte color = png_get_color_type(png, info);
    const png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const std::size_t w = png_get_image_width(png, info);
    const std::size_t h = png_get_image_height(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    if (rowbytes != w * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("read_png: unsupported pixel layout in " + path.string());
    }
    rows.resize(rowbytes * h);
    row_ptrs.resize(h);
    for (std::size_t y = 0; y < h; ++y) row_ptrs[y] = rows.data() + y * rowbytes;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Image img(3, h, w);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(rows[y * rowbytes + x * 3 + c]) / 255.0f;
        }
    }
    return img;
}

} // namespace ossa
