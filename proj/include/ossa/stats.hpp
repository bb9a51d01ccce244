#pragma once

// Per-instance, per-channel spatial statistics and instance normalization.
//
// For a feature map x of shape (B, C, H, W):
//   mu[b,c]    = 1/(HW) * sum_{h,w} x[b,c,h,w]
//   sigma[b,c] = sqrt(1/(HW) * sum_{h,w} (x[b,c,h,w] - mu[b,c])^2 + eps)
// The variance is the population variance. Accumulation is always done in
// double, whatever the storage type of x.

#include <cmath>
#include <string>

#include "ossa/tensor.hpp"

namespace ossa {

inline constexpr double kDefaultEps = 1e-5;

namespace detail {

inline void require_eps(double eps, const char *op) {
    if (!(eps > 0.0) || !std::isfinite(eps)) {
        throw InvalidInput(std::string(op) + ": eps must be a positive finite number");
    }
}

template <typename T>
double plane_mean(std::span<const T> p) {
    double s = 0.0;
    for (T v : p) s += static_cast<double>(v);
    return s / static_cast<double>(p.size());
}

template <typename T>
double plane_variance(std::span<const T> p, double mean) {
    double s = 0.0;
    for (T v : p) {
        const double d = static_cast<double>(v) - mean;
        s += d * d;
    }
    return s / static_cast<double>(p.size());
}

} // namespace detail

template <typename T>
ChannelMatrix channel_mean(const Tensor4<T> &x) {
    require_valid(x, "channel_mean");
    const auto &s = x.shape();
    ChannelMatrix out(s.batch, s.channels);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) out(b, c) = detail::plane_mean(x.plane(b, c));
    }
    return out;
}

template <typename T>
ChannelMatrix channel_std(const Tensor4<T> &x, double eps = kDefaultEps) {
    require_valid(x, "channel_std");
    detail::require_eps(eps, "channel_std");
    const auto &s = x.shape();
    ChannelMatrix out(s.batch, s.channels);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const auto p = x.plane(b, c);
            out(b, c) = std::sqrt(detail::plane_variance(p, detail::plane_mean(p)) + eps);
        }
    }
    return out;
}

/// Both statistics in one pass over the planes.
template <typename T>
ChannelStats channel_stats(const Tensor4<T> &x, double eps = kDefaultEps) {
    require_valid(x, "channel_stats");
    detail::require_eps(eps, "channel_stats");
    const auto &s = x.shape();
    ChannelStats st{ChannelMatrix(s.batch, s.channels), ChannelMatrix(s.batch, s.channels)};
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const auto p = x.plane(b, c);
            const double m = detail::plane_mean(p);
            st.mu(b, c) = m;
            st.sigma(b, c) = std::sqrt(detail::plane_variance(p, m) + eps);
        }
    }
    return st;
}

template <typename T>
Tensor4<T> instance_normalize(const Tensor4<T> &x, double eps = kDefaultEps) {
    const ChannelStats st = channel_stats(x, eps);
    Tensor4<T> out(x.shape());
    const auto &s = x.shape();
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double m = st.mu(b, c);
            const double inv = 1.0 / st.sigma(b, c);
            auto src = x.plane(b, c);
            auto dst = out.plane(b, c);
            for (std::size_t i = 0; i < src.size(); ++i) {
                dst[i] = static_cast<T>((static_cast<double>(src[i]) - m) * inv);
            }
        }
    }
    return out;
}

// Backward passes. Each returns dL/dx given the upstream gradient.

/// grad: (B, C) matrix dL/dmu.
template <typename T>
Tensor4<T> channel_mean_backward(const Shape4 &shape, const ChannelMatrix &grad) {
    if (grad.rows() != shape.batch || grad.cols() != shape.channels) {
        throw ShapeMismatch("channel_mean_backward: gradient shape does not match " + to_string(shape));
    }
    Tensor4<T> dx(shape);
    const double n = static_cast<double>(shape.plane());
    for (std::size_t b = 0; b < shape.batch; ++b) {
        for (std::size_t c = 0; c < shape.channels; ++c) {
            for (T &v : dx.plane(b, c)) v = static_cast<T>(grad(b, c) / n);
        }
    }
    return dx;
}

/// dsigma/dx = (x - mu) / (HW * sigma)
template <typename T>
Tensor4<T> channel_std_backward(const Tensor4<T> &x, const ChannelMatrix &grad, double eps = kDefaultEps) {
    const ChannelStats st = channel_stats(x, eps);
    const auto &s = x.shape();
    if (grad.rows() != s.batch || grad.cols() != s.channels) {
        throw ShapeMismatch("channel_std_backward: gradient shape does not match " + to_string(s));
    }
    Tensor4<T> dx(s);
    const double n = static_cast<double>(s.plane());
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double k = grad(b, c) / (n * st.sigma(b, c));
            auto src = x.plane(b, c);
            auto dst = dx.plane(b, c);
            for (std::size_t i = 0; i < src.size(); ++i) {
                dst[i] = static_cast<T>(k * (static_cast<double>(src[i]) - st.mu(b, c)));
            }
        }
    }
    return dx;
}

/// With xhat = instance_normalize(x) and g = dL/dxhat:
///   dL/dx = (g - mean(g) - xhat * mean(g * xhat)) / sigma
/// where the means run over each (b, c) plane.
template <typename T>
Tensor4<T> instance_normalize_backward(const Tensor4<T> &x, const Tensor4<T> &grad_out, double eps = kDefaultEps) {
    if (grad_out.shape() != x.shape()) {
        throw ShapeMismatch("instance_normalize_backward: gradient shape " + to_string(grad_out.shape()) +
                            " does not match input " + to_string(x.shape()));
    }
    const ChannelStats st = channel_stats(x, eps);
    const auto &s = x.shape();
    Tensor4<T> dx(s);
    const double n = static_cast<double>(s.plane());
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double m = st.mu(b, c);
            const double inv = 1.0 / st.sigma(b, c);
            auto src = x.plane(b, c);
            auto g = grad_out.plane(b, c);
            double g_sum = 0.0;
            double gx_sum = 0.0;
            for (std::size_t i = 0; i < src.size(); ++i) {
                const double xhat = (static_cast<double>(src[i]) - m) * inv;
                g_sum += static_cast<double>(g[i]);
                gx_sum += static_cast<double>(g[i]) * xhat;
            }
            const double g_mean = g_sum / n;
            const double gx_mean = gx_sum / n;
            auto dst = dx.plane(b, c);
            for (std::size_t i = 0; i < src.size(); ++i) {
                const double xhat = (static_cast<double>(src[i]) - m) * inv;
                dst[i] = static_cast<T>((static_cast<double>(g[i]) - g_mean - xhat * gx_mean) * inv);
            }
        }
    }
    return dx;
}

} // namespace ossa
