#pragma once

#include <cmath>
#include <string>

#include "ossa/rng.hpp"
#include "ossa/stats.hpp"
#include "ossa/tensor.hpp"

namespace ossa {

/// Standard deviation of the multiplicative style noise used by default.
inline constexpr double kDefaultNoiseStd = 0.75;

/// Multiplicative Gaussian noise on style statistics: alpha, beta ~ N(1, std^2),
/// drawn independently for every (instance, channel).
struct NoiseSpec {
    static constexpr double mean = 1.0;
    double std = kDefaultNoiseStd;

    void validate() const {
        if (!std::isfinite(std) || std < 0.0) {
            throw InvalidInput("NoiseSpec: std must be a finite value >= 0, got " + std::to_string(std));
        }
    }
};

/// Scale (alpha) and shift (beta) multipliers, both shaped (B, C).
struct Perturbation {
    ChannelMatrix alpha;
    ChannelMatrix beta;
};

/// Draws alpha for every (b, c) in row-major order, then beta the same way.
/// No clamping: negative multipliers are legal draws.
inline Perturbation sample_perturbation(SeededRng &rng, const NoiseSpec &spec, std::size_t batch,
                                        std::size_t channels) {
    spec.validate();
    Perturbation p{ChannelMatrix(batch, channels, 1.0), ChannelMatrix(batch, channels, 1.0)};
    if (spec.std == 0.0) return p;
    for (double &a : p.alpha.data()) a = NoiseSpec::mean + spec.std * rng.normal();
    for (double &b : p.beta.data()) b = NoiseSpec::mean + spec.std * rng.normal();
    return p;
}

namespace detail {

/// Index of the target row to use for instance b: target stats either carry
/// one row per instance or a single row broadcast over the batch.
inline std::size_t check_target(const Shape4 &s, const ChannelStats &target, const char *op) {
    target.validate();
    if (target.channels() != s.channels) {
        throw ShapeMismatch(std::string(op) + ": target has " + std::to_string(target.channels()) +
                            " channels, feature map has " + std::to_string(s.channels));
    }
    if (target.batch() != s.batch && target.batch() != 1) {
        throw ShapeMismatch(std::string(op) + ": target batch " + std::to_string(target.batch()) +
                            " cannot broadcast to " + std::to_string(s.batch));
    }
    return target.batch() == 1 ? 0 : 1;
}

inline void check_perturbation(const Shape4 &s, const Perturbation &p, const char *op) {
    if (p.alpha.rows() != s.batch || p.alpha.cols() != s.channels || p.beta.rows() != s.batch ||
        p.beta.cols() != s.channels) {
        throw ShapeMismatch(std::string(op) + ": perturbation must be shaped (B, C) of the feature map");
    }
}

/// Per-(b, c) output scale and shift: alpha * sigma(y) and beta * mu(y).
inline std::pair<ChannelMatrix, ChannelMatrix> style_affine(const Shape4 &s, const ChannelStats &target,
                                                            const Perturbation *p, const char *op) {
    const std::size_t stride = check_target(s, target, op);
    if (p != nullptr) check_perturbation(s, *p, op);
    ChannelMatrix scale(s.batch, s.channels);
    ChannelMatrix shift(s.batch, s.channels);
    for (std::size_t b = 0; b < s.batch; ++b) {
        const std::size_t tb = b * stride;
        for (std::size_t c = 0; c < s.channels; ++c) {
            scale(b, c) = target.sigma(tb, c);
            shift(b, c) = target.mu(tb, c);
            if (p != nullptr) {
                scale(b, c) = p->alpha(b, c) * scale(b, c);
                shift(b, c) = p->beta(b, c) * shift(b, c);
            }
        }
    }
    return {std::move(scale), std::move(shift)};
}

template <typename T>
Tensor4<T> restyle(const Tensor4<T> &x, const ChannelMatrix &scale, const ChannelMatrix &shift, double eps) {
    const ChannelStats st = channel_stats(x, eps);
    const auto &s = x.shape();
    Tensor4<T> out(s);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double m = st.mu(b, c);
            const double k = scale(b, c) / st.sigma(b, c);
            const double t = shift(b, c);
            auto src = x.plane(b, c);
            auto dst = out.plane(b, c);
            for (std::size_t i = 0; i < src.size(); ++i) {
                dst[i] = static_cast<T>(k * (static_cast<double>(src[i]) - m) + t);
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> restyle_backward(const Tensor4<T> &x, const ChannelMatrix &scale, const Tensor4<T> &grad_out,
                            double eps) {
    if (grad_out.shape() != x.shape()) throw ShapeMismatch("restyle_backward: gradient shape mismatch");
    Tensor4<T> g(x.shape());
    const auto &s = x.shape();
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double k = scale(b, c);
            auto src = grad_out.plane(b, c);
            auto dst = g.plane(b, c);
            for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<T>(k * static_cast<double>(src[i]));
        }
    }
    return instance_normalize_backward(x, g, eps);
}

} // namespace detail

/// AdaIN: re-normalize x so each (b, c) plane carries the target mean and std.
///   out = sigma(y) * (x - mu(x)) / sigma(x) + mu(y)
/// `target` may have B rows or one row broadcast over the batch.
template <typename T>
Tensor4<T> adain(const Tensor4<T> &x, const ChannelStats &target, double eps = kDefaultEps) {
    require_valid(x, "adain");
    detail::require_eps(eps, "adain");
    auto [scale, shift] = detail::style_affine(x.shape(), target, nullptr, "adain");
    return detail::restyle(x, scale, shift, eps);
}

/// AdaIN towards a perturbed target style with caller-supplied multipliers:
///   out = alpha * sigma(y) * (x - mu(x)) / sigma(x) + beta * mu(y)
/// With alpha = beta = 1 this computes exactly the same values as adain().
template <typename T>
Tensor4<T> ossa_with(const Tensor4<T> &x, const ChannelStats &target, const Perturbation &noise,
                     double eps = kDefaultEps) {
    require_valid(x, "ossa");
    detail::require_eps(eps, "ossa");
    auto [scale, shift] = detail::style_affine(x.shape(), target, &noise, "ossa");
    return detail::restyle(x, scale, shift, eps);
}

/// Same as ossa_with() with fresh multipliers drawn from `rng`.
template <typename T>
Tensor4<T> ossa(const Tensor4<T> &x, const ChannelStats &target, SeededRng &rng, const NoiseSpec &spec,
                double eps = kDefaultEps, Perturbation *drawn = nullptr) {
    require_valid(x, "ossa");
    detail::check_target(x.shape(), target, "ossa");
    Perturbation p = sample_perturbation(rng, spec, x.shape().batch, x.shape().channels);
    Tensor4<T> out = ossa_with(x, target, p, eps);
    if (drawn != nullptr) *drawn = std::move(p);
    return out;
}

/// Gradient of adain() w.r.t. x; target statistics are treated as constants.
template <typename T>
Tensor4<T> adain_backward(const Tensor4<T> &x, const ChannelStats &target, const Tensor4<T> &grad_out,
                          double eps = kDefaultEps) {
    auto [scale, shift] = detail::style_affine(x.shape(), target, nullptr, "adain_backward");
    return detail::restyle_backward(x, scale, grad_out, eps);
}

/// Gradient of ossa_with() w.r.t. x; alpha, beta and the target are constants.
template <typename T>
Tensor4<T> ossa_backward(const Tensor4<T> &x, const ChannelStats &target, const Perturbation &noise,
                         const Tensor4<T> &grad_out, double eps = kDefaultEps) {
    auto [scale, shift] = detail::style_affine(x.shape(), target, &noise, "ossa_backward");
    return detail::restyle_backward(x, scale, grad_out, eps);
}

} // namespace ossa
