#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ossa/error.hpp"

namespace ossa {

/// Dimensions of a rank-4 activation tensor in NCHW order.
struct Shape4 {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;

    [[nodiscard]] constexpr std::size_t plane() const noexcept { return height * width; }
    [[nodiscard]] constexpr std::size_t size() const noexcept { return batch * channels * plane(); }
    [[nodiscard]] constexpr bool valid() const noexcept {
        return batch >= 1 && channels >= 1 && height >= 1 && width >= 1;
    }

    friend constexpr bool operator==(const Shape4 &, const Shape4 &) = default;
};

inline std::string to_string(const Shape4 &s) {
    std::ostringstream os;
    os << '(' << s.batch << ", " << s.channels << ", " << s.height << ", " << s.width << ')';
    return os.str();
}

inline std::ostream &operator<<(std::ostream &os, const Shape4 &s) { return os << to_string(s); }

/// Dense NCHW tensor with contiguous storage.
template <typename T>
class Tensor4 {
  public:
    using value_type = T;

    Tensor4() = default;

    explicit Tensor4(Shape4 shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {
        if (!shape.valid()) {
            throw ShapeMismatch("Tensor4: every dimension must be >= 1, got " + to_string(shape));
        }
    }

    Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (!shape.valid()) {
            throw ShapeMismatch("Tensor4: every dimension must be >= 1, got " + to_string(shape));
        }
        if (data_.size() != shape.size()) {
            throw ShapeMismatch("Tensor4: " + std::to_string(data_.size()) + " values do not fill shape " +
                                to_string(shape));
        }
    }

    [[nodiscard]] const Shape4 &shape() const noexcept { return shape_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] std::vector<T> &storage() noexcept { return data_; }

    [[nodiscard]] std::size_t offset(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return ((b * shape_.channels + c) * shape_.height + h) * shape_.width + w;
    }

    T &operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) noexcept {
        return data_[offset(b, c, h, w)];
    }
    const T &operator()(std::size_t b, std::size_t c, std::size_t h, std::size_t w) const noexcept {
        return data_[offset(b, c, h, w)];
    }

    /// The H x W plane of one (instance, channel) pair.
    [[nodiscard]] std::span<T> plane(std::size_t b, std::size_t c) noexcept {
        return std::span<T>(data_).subspan((b * shape_.channels + c) * shape_.plane(), shape_.plane());
    }
    [[nodiscard]] std::span<const T> plane(std::size_t b, std::size_t c) const noexcept {
        return std::span<const T>(data_).subspan((b * shape_.channels + c) * shape_.plane(), shape_.plane());
    }

    template <typename U>
    [[nodiscard]] Tensor4<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor4<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor4 &, const Tensor4 &) = default;

  private:
    Shape4 shape_{};
    std::vector<T> data_;
};

/// Row-major dense matrix.
template <typename T>
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T fill = T{0}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows * cols) {
            throw ShapeMismatch("Matrix: " + std::to_string(data_.size()) + " values do not fill " +
                                std::to_string(rows) + "x" + std::to_string(cols));
        }
    }

    [[nodiscard]] std::size_t rows() const noexcept { return rows_; }
    [[nodiscard]] std::size_t cols() const noexcept { return cols_; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    T &operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    const T &operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] std::span<const T> row(std::size_t r) const noexcept {
        return std::span<const T>(data_).subspan(r * cols_, cols_);
    }

    friend bool operator==(const Matrix &, const Matrix &) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

/// (batch, channel) matrix of statistics; always double precision.
using ChannelMatrix = Matrix<double>;

/// Per-instance, per-channel spatial mean and standard deviation.
struct ChannelStats {
    ChannelMatrix mu;
    ChannelMatrix sigma;

    [[nodiscard]] std::size_t batch() const noexcept { return mu.rows(); }
    [[nodiscard]] std::size_t channels() const noexcept { return mu.cols(); }

    /// Throws unless shapes agree, every entry is finite, and sigma >= 0.
    void validate() const {
        if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols()) {
            throw ShapeMismatch("ChannelStats: mu and sigma shapes differ");
        }
        if (mu.rows() == 0 || mu.cols() == 0) {
            throw ShapeMismatch("ChannelStats: empty statistics");
        }
        for (double v : mu.data()) {
            if (!std::isfinite(v)) throw InvalidInput("ChannelStats: non-finite mu entry");
        }
        for (double v : sigma.data()) {
            if (!std::isfinite(v)) throw InvalidInput("ChannelStats: non-finite sigma entry");
            if (v < 0.0) throw InvalidInput("ChannelStats: negative sigma entry");
        }
    }

    friend bool operator==(const ChannelStats &, const ChannelStats &) = default;
};

template <typename T>
void require_finite(std::span<const T> values, const char *op) {
    for (T v : values) {
        if (!std::isfinite(static_cast<double>(v))) {
            throw InvalidInput(std::string(op) + ": input contains a non-finite value");
        }
    }
}

template <typename T>
void require_valid(const Tensor4<T> &x, const char *op) {
    if (!x.shape().valid() || x.size() != x.shape().size()) {
        throw ShapeMismatch(std::string(op) + ": invalid feature map shape " + to_string(x.shape()));
    }
    require_finite(x.data(), op);
}

} // namespace ossa
