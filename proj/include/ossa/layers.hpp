#pragma once

// Minimal layers for the toy backbone: 2-D convolution (im2col + GEMM),
// ReLU, global average pooling, a linear classifier and softmax
// cross-entropy. Forward passes are const; anything the backward pass needs
// is stored by the caller.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <vector>

#include "ossa/rng.hpp"
#include "ossa/tensor.hpp"

namespace ossa::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Parameter {
    std::string name;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> velocity;

    Parameter() = default;
    Parameter(std::string n, std::size_t size) : name(std::move(n)), value(size), grad(size), velocity(size) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
};

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 1;

    [[nodiscard]] std::size_t out_extent(std::size_t in) const {
        return (in + 2 * padding - kernel) / stride + 1;
    }
    [[nodiscard]] std::size_t patch() const { return in_channels * kernel * kernel; }
};

template <typename T>
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(std::string name, ConvGeometry g)
        : geom_(g), weight_(name + ".weight", g.out_channels * g.patch()), bias_(name + ".bias", g.out_channels) {}

    /// He-normal weights, zero bias.
    void initialize(SeededRng &rng) {
        const double std = std::sqrt(2.0 / static_cast<double>(geom_.patch()));
        for (T &w : weight_.value) w = static_cast<T>(rng.normal() * std);
        std::fill(bias_.value.begin(), bias_.value.end(), T{0});
    }

    [[nodiscard]] const ConvGeometry &geometry() const noexcept { return geom_; }
    [[nodiscard]] Shape4 output_shape(const Shape4 &in) const {
        return {in.batch, geom_.out_channels, geom_.out_extent(in.height), geom_.out_extent(in.width)};
    }

    /// Unrolls input patches into a (patch, B * Hout * Wout) matrix.
    [[nodiscard]] RowMatrix<T> im2col(const Tensor4<T> &x) const {
        const Shape4 &s = x.shape();
        const Shape4 o = output_shape(s);
        const std::size_t P = o.plane();
        const std::size_t k = geom_.kernel;
        RowMatrix<T> cols(static_cast<Eigen::Index>(geom_.patch()), static_cast<Eigen::Index>(s.batch * P));
        for (std::size_t ci = 0; ci < s.channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    T *row = cols.row(static_cast<Eigen::Index>((ci * k + ky) * k + kx)).data();
                    for (std::size_t b = 0; b < s.batch; ++b) {
                        auto plane = x.plane(b, ci);
                        T *dst = row + b * P;
                        for (std::size_t oy = 0; oy < o.height; ++oy) {
                            const long iy = static_cast<long>(oy * geom_.stride + ky) - static_cast<long>(geom_.padding);
                            for (std::size_t ox = 0; ox < o.width; ++ox) {
                                const long ix =
                                    static_cast<long>(ox * geom_.stride + kx) - static_cast<long>(geom_.padding);
                                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(s.height) &&
                                                    ix < static_cast<long>(s.width);
                                dst[oy * o.width + ox] =
                                    inside ? plane[static_cast<std::size_t>(iy) * s.width + static_cast<std::size_t>(ix)]
                                           : T{0};
                            }
                        }
                    }
                }
            }
        }
        return cols;
    }

    /// Pre-activation output given the unrolled input.
    [[nodiscard]] Tensor4<T> forward_cols(const RowMatrix<T> &cols, const Shape4 &in) const {
        const Shape4 o = output_shape(in);
        const std::size_t P = o.plane();
        Eigen::Map<const RowMatrix<T>> w(weight_.value.data(), static_cast<Eigen::Index>(geom_.out_channels),
                                         static_cast<Eigen::Index>(geom_.patch()));
        RowMatrix<T> y = w * cols;
        Tensor4<T> out(o);
        for (std::size_t b = 0; b < in.batch; ++b) {
            for (std::size_t co = 0; co < o.channels; ++co) {
                const T *src = y.row(static_cast<Eigen::Index>(co)).data() + b * P;
                const T bias = bias_.value[co];
                auto dst = out.plane(b, co);
                for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bias;
            }
        }
        return out;
    }

    [[nodiscard]] Tensor4<T> forward(const Tensor4<T> &x) const { return forward_cols(im2col(x), x.shape()); }

    /// Accumulates weight/bias gradients (when `accumulate_params`) and returns
    /// dL/dx (when `need_input_grad`, otherwise an empty tensor).
    Tensor4<T> backward(const RowMatrix<T> &cols, const Shape4 &in, const Tensor4<T> &grad_out,
                        bool accumulate_params, bool need_input_grad) {
        const Shape4 o = output_shape(in);
        const std::size_t P = o.plane();
        RowMatrix<T> dy(static_cast<Eigen::Index>(o.channels), static_cast<Eigen::Index>(in.batch * P));
        for (std::size_t b = 0; b < in.batch; ++b) {
            for (std::size_t co = 0; co < o.channels; ++co) {
                auto src = grad_out.plane(b, co);
                std::copy(src.begin(), src.end(), dy.row(static_cast<Eigen::Index>(co)).data() + b * P);
            }
        }
        if (accumulate_params) {
            Eigen::Map<RowMatrix<T>> dw(weight_.grad.data(), static_cast<Eigen::Index>(geom_.out_channels),
                                        static_cast<Eigen::Index>(geom_.patch()));
            dw.noalias() += dy * cols.transpose();
            for (std::size_t co = 0; co < o.channels; ++co) bias_.grad[co] += dy.row(static_cast<Eigen::Index>(co)).sum();
        }
        if (!need_input_grad) return {};
        Eigen::Map<const RowMatrix<T>> w(weight_.value.data(), static_cast<Eigen::Index>(geom_.out_channels),
                                         static_cast<Eigen::Index>(geom_.patch()));
        RowMatrix<T> dcols = w.transpose() * dy;
        return col2im(dcols, in);
    }

    [[nodiscard]] Parameter<T> &weight() noexcept { return weight_; }
    [[nodiscard]] Parameter<T> &bias() noexcept { return bias_; }
    [[nodiscard]] const Parameter<T> &weight() const noexcept { return weight_; }
    [[nodiscard]] const Parameter<T> &bias() const noexcept { return bias_; }

  private:
    [[nodiscard]] Tensor4<T> col2im(const RowMatrix<T> &dcols, const Shape4 &s) const {
        const Shape4 o = output_shape(s);
        const std::size_t P = o.plane();
        const std::size_t k = geom_.kernel;
        Tensor4<T> dx(s);
        for (std::size_t ci = 0; ci < s.channels; ++ci) {
            for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                    const T *row = dcols.row(static_cast<Eigen::Index>((ci * k + ky) * k + kx)).data();
                    for (std::size_t b = 0; b < s.batch; ++b) {
                        auto plane = dx.plane(b, ci);
                        const T *src = row + b * P;
                        for (std::size_t oy = 0; oy < o.height; ++oy) {
                            const long iy = static_cast<long>(oy * geom_.stride + ky) - static_cast<long>(geom_.padding);
                            if (iy < 0 || iy >= static_cast<long>(s.height)) continue;
                            for (std::size_t ox = 0; ox < o.width; ++ox) {
                                const long ix =
                                    static_cast<long>(ox * geom_.stride + kx) - static_cast<long>(geom_.padding);
                                if (ix < 0 || ix >= static_cast<long>(s.width)) continue;
                                plane[static_cast<std::size_t>(iy) * s.width + static_cast<std::size_t>(ix)] +=
                                    src[oy * o.width + ox];
                            }
                        }
                    }
                }
            }
        }
        return dx;
    }

    ConvGeometry geom_{};
    Parameter<T> weight_;
    Parameter<T> bias_;
};

template <typename T>
void relu_inplace(Tensor4<T> &x) {
    for (T &v : x.data()) v = v > T{0} ? v : T{0};
}

/// Masks grad by (activation > 0), in place.
template <typename T>
void relu_backward_inplace(const Tensor4<T> &activation, Tensor4<T> &grad) {
    auto a = activation.data();
    auto g = grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(a[i] > T{0})) g[i] = T{0};
    }
}

template <typename T>
Matrix<T> global_avg_pool(const Tensor4<T> &x) {
    const Shape4 &s = x.shape();
    Matrix<T> out(s.batch, s.channels);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            double acc = 0.0;
            for (T v : x.plane(b, c)) acc += static_cast<double>(v);
            out(b, c) = static_cast<T>(acc / static_cast<double>(s.plane()));
        }
    }
    return out;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Shape4 &s, const Matrix<T> &grad) {
    Tensor4<T> dx(s);
    const T inv = static_cast<T>(1.0 / static_cast<double>(s.plane()));
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            for (T &v : dx.plane(b, c)) v = grad(b, c) * inv;
        }
    }
    return dx;
}

template <typename T>
class Linear {
  public:
    Linear() = default;
    Linear(std::string name, std::size_t in, std::size_t out)
        : in_(in), out_(out), weight_(name + ".weight", in * out), bias_(name + ".bias", out) {}

    void initialize(SeededRng &rng) {
        const double std = std::sqrt(1.0 / static_cast<double>(in_));
        for (T &w : weight_.value) w = static_cast<T>(rng.normal() * std);
        std::fill(bias_.value.begin(), bias_.value.end(), T{0});
    }

    [[nodiscard]] std::size_t in_features() const noexcept { return in_; }
    [[nodiscard]] std::size_t out_features() const noexcept { return out_; }

    [[nodiscard]] Matrix<T> forward(const Matrix<T> &x) const {
        Matrix<T> y(x.rows(), out_);
        for (std::size_t b = 0; b < x.rows(); ++b) {
            for (std::size_t o = 0; o < out_; ++o) {
                double acc = static_cast<double>(bias_.value[o]);
                for (std::size_t i = 0; i < in_; ++i) {
                    acc += static_cast<double>(weight_.value[o * in_ + i]) * static_cast<double>(x(b, i));
                }
                y(b, o) = static_cast<T>(acc);
            }
        }
        return y;
    }

    Matrix<T> backward(const Matrix<T> &x, const Matrix<T> &grad_out) {
        Matrix<T> dx(x.rows(), in_);
        for (std::size_t b = 0; b < x.rows(); ++b) {
            for (std::size_t o = 0; o < out_; ++o) {
                const T g = grad_out(b, o);
                bias_.grad[o] += g;
                for (std::size_t i = 0; i < in_; ++i) {
                    weight_.grad[o * in_ + i] += g * x(b, i);
                    dx(b, i) += g * weight_.value[o * in_ + i];
                }
            }
        }
        return dx;
    }

    [[nodiscard]] Parameter<T> &weight() noexcept { return weight_; }
    [[nodiscard]] Parameter<T> &bias() noexcept { return bias_; }
    [[nodiscard]] const Parameter<T> &weight() const noexcept { return weight_; }
    [[nodiscard]] const Parameter<T> &bias() const noexcept { return bias_; }

  private:
    std::size_t in_ = 0;
    std::size_t out_ = 0;
    Parameter<T> weight_;
    Parameter<T> bias_;
};

/// Mean softmax cross-entropy over the batch; writes dL/dlogits into `grad`.
template <typename T>
double softmax_cross_entropy(const Matrix<T> &logits, std::span<const int> labels,
                             Matrix<std::type_identity_t<T>> *grad = nullptr) {
    const std::size_t B = logits.rows();
    const std::size_t N = logits.cols();
    if (labels.size() != B) throw ShapeMismatch("softmax_cross_entropy: label count does not match batch");
    if (grad != nullptr) *grad = Matrix<T>(B, N);
    double loss = 0.0;
    std::vector<double> p(N);
    for (std::size_t b = 0; b < B; ++b) {
        const int y = labels[b];
        if (y < 0 || static_cast<std::size_t>(y) >= N) throw InvalidInput("softmax_cross_entropy: label out of range");
        double mx = static_cast<double>(logits(b, 0));
        for (std::size_t n = 1; n < N; ++n) mx = std::max(mx, static_cast<double>(logits(b, n)));
        double z = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            p[n] = std::exp(static_cast<double>(logits(b, n)) - mx);
            z += p[n];
        }
        loss += -(static_cast<double>(logits(b, static_cast<std::size_t>(y))) - mx - std::log(z));
        if (grad != nullptr) {
            for (std::size_t n = 0; n < N; ++n) {
                const double target = static_cast<std::size_t>(y) == n ? 1.0 : 0.0;
                (*grad)(b, n) = static_cast<T>((p[n] / z - target) / static_cast<double>(B));
            }
        }
    }
    return loss / static_cast<double>(B);
}

} // namespace ossa::nn
