#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "ossa/style_transform.hpp"
#include "test_util.hpp"

using namespace ossa;
using testutil::oracle_mean;
using testutil::oracle_variance;
using testutil::random_matrix;
using testutil::random_shape;
using testutil::random_tensor;

namespace {

ChannelStats random_target(SeededRng &rng, std::size_t rows, std::size_t cols) {
    return {random_matrix(rng, rows, cols, -3.0, 3.0), random_matrix(rng, rows, cols, 0.3, 3.0)};
}

/// Elementwise reference: scale * (x - mu) / sd + shift, with
/// (scale, shift) = (alpha * sigma_t, beta * mu_t).
Tensor4<double> oracle_restyle(const Tensor4<double> &x, const ChannelStats &t, const ChannelMatrix *alpha,
                               const ChannelMatrix *beta, double eps = kDefaultEps) {
    const Shape4 &s = x.shape();
    Tensor4<double> out(s);
    for (std::size_t b = 0; b < s.batch; ++b) {
        const std::size_t tb = t.batch() == 1 ? 0 : b;
        for (std::size_t c = 0; c < s.channels; ++c) {
            const double m = oracle_mean(x, b, c);
            const double sd = std::sqrt(oracle_variance(x, b, c) + eps);
            const double a = alpha ? (*alpha)(b, c) : 1.0;
            const double k = beta ? (*beta)(b, c) : 1.0;
            for (std::size_t h = 0; h < s.height; ++h) {
                for (std::size_t w = 0; w < s.width; ++w) {
                    out(b, c, h, w) = a * t.sigma(tb, c) * (x(b, c, h, w) - m) / sd + k * t.mu(tb, c);
                }
            }
        }
    }
    return out;
}

} // namespace

TEST(Adain, SelfStyleIdentity) {
    SeededRng rng(21);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 3, 4, 7, 7));
        const auto y = adain(x, channel_stats(x));
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i], 1e-4);
    }
}

TEST(Adain, NormalizedInputToFixedTarget) {
    SeededRng rng(22);
    const auto x = instance_normalize(random_tensor(rng, {2, 3, 8, 8}));
    const ChannelStats t{ChannelMatrix(1, 3, 2.0), ChannelMatrix(1, 3, 3.0)};
    const auto y = adain(x, t);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t c = 0; c < 3; ++c) {
            EXPECT_NEAR(oracle_mean(y, b, c), 2.0, 1e-4);
            EXPECT_NEAR(std::sqrt(oracle_variance(y, b, c)), 3.0, 1e-4);
        }
    }
}

TEST(Adain, MatchesElementwiseOracle) {
    SeededRng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor(rng, {2, 2, 3, 3});
        const auto t = random_target(rng, 2, 2);
        const auto y = adain(x, t);
        const auto ref = oracle_restyle(x, t, nullptr, nullptr);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-10);
    }
}

TEST(Adain, BroadcastsSingleRowTarget) {
    SeededRng rng(24);
    const auto x = random_tensor(rng, {4, 3, 5, 5});
    const auto t = random_target(rng, 1, 3);
    const auto y = adain(x, t);
    const auto ref = oracle_restyle(x, t, nullptr, nullptr);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-10);
}

TEST(Adain, OutputStatisticsEqualTarget) {
    SeededRng rng(25);
    for (int trial = 0; trial < 100; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 3, 5, 8, 8), 0.5);
        if (x.shape().plane() < 4) continue;
        const auto t = random_target(rng, x.shape().batch, x.shape().channels);
        const auto y = adain(x, t);
        for (std::size_t b = 0; b < x.shape().batch; ++b) {
            for (std::size_t c = 0; c < x.shape().channels; ++c) {
                EXPECT_NEAR(oracle_mean(y, b, c), t.mu(b, c), 1e-4);
                const double v = oracle_variance(x, b, c);
                const double expected = t.sigma(b, c) * std::sqrt(v / (v + kDefaultEps));
                EXPECT_NEAR(std::sqrt(oracle_variance(y, b, c)), expected, 1e-9 * t.sigma(b, c));
                if (v > 0.25) EXPECT_NEAR(std::sqrt(oracle_variance(y, b, c)), t.sigma(b, c), 1e-4);
            }
        }
    }
}

TEST(Adain, StyleRoundTrip) {
    SeededRng rng(26);
    for (int trial = 0; trial < 30; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 3, 4, 6, 6), 0.5);
        if (x.shape().plane() < 4) continue;
        const auto back = adain(adain(x, random_target(rng, 1, x.shape().channels)), channel_stats(x));
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back.data()[i], x.data()[i], 1e-3);
    }
}

TEST(Adain, Errors) {
    SeededRng rng(27);
    const auto x = random_tensor(rng, {2, 3, 4, 4});
    EXPECT_THROW((void)adain(x, random_target(rng, 2, 4)), ShapeMismatch);
    EXPECT_THROW((void)adain(x, random_target(rng, 3, 3)), ShapeMismatch);
    ChannelStats neg = random_target(rng, 1, 3);
    neg.sigma(0, 1) = -0.5;
    EXPECT_THROW((void)adain(x, neg), InvalidInput);
    ChannelStats mismatched{ChannelMatrix(1, 3, 0.0), ChannelMatrix(1, 2, 1.0)};
    EXPECT_THROW((void)adain(x, mismatched), ShapeMismatch);
}

TEST(Perturbation, ZeroStdIsExactlyOne) {
    SeededRng rng(31);
    const auto p = sample_perturbation(rng, NoiseSpec{.std = 0.0}, 4, 7);
    for (double a : p.alpha.data()) EXPECT_EQ(a, 1.0);
    for (double b : p.beta.data()) EXPECT_EQ(b, 1.0);
}

TEST(Perturbation, DefaultSpec) {
    EXPECT_EQ(NoiseSpec{}.std, 0.75);
    EXPECT_EQ(NoiseSpec::mean, 1.0);
    EXPECT_THROW(NoiseSpec{.std = -0.1}.validate(), InvalidInput);
}

TEST(Perturbation, SameSeedSameDraws) {
    SeededRng a(32);
    SeededRng b(32);
    const auto pa = sample_perturbation(a, NoiseSpec{}, 3, 5);
    const auto pb = sample_perturbation(b, NoiseSpec{}, 3, 5);
    EXPECT_EQ(pa.alpha, pb.alpha);
    EXPECT_EQ(pa.beta, pb.beta);
}

TEST(Perturbation, AlphaAndBetaAreDistinctDraws) {
    SeededRng rng(33);
    const auto p = sample_perturbation(rng, NoiseSpec{}, 2, 8);
    EXPECT_NE(p.alpha, p.beta);
    std::size_t negatives = 0;
    SeededRng big(34);
    const auto q = sample_perturbation(big, NoiseSpec{}, 100, 100);
    for (double a : q.alpha.data()) negatives += a < 0.0 ? 1 : 0;
    EXPECT_GT(negatives, 0u);
}

TEST(Perturbation, Moments) {
    SeededRng rng(35);
    const auto p = sample_perturbation(rng, NoiseSpec{}, 1000, 100);
    for (const ChannelMatrix *m : {&p.alpha, &p.beta}) {
        double s = 0.0;
        double ss = 0.0;
        for (double v : m->data()) s += v;
        const double mean = s / static_cast<double>(m->size());
        for (double v : m->data()) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / static_cast<double>(m->size()));
        EXPECT_NEAR(mean, 1.0, 0.01);
        EXPECT_NEAR(sd, 0.75, 0.01);
    }
}

TEST(Ossa, ZeroStdEqualsAdain) {
    SeededRng data(41);
    SeededRng rng(42);
    for (int trial = 0; trial < 30; ++trial) {
        const auto x = random_tensor(data, random_shape(data, 3, 4, 6, 6));
        const auto t = random_target(data, 1, x.shape().channels);
        const auto a = adain(x, t);
        const auto o = ossa::ossa(x, t, rng, NoiseSpec{.std = 0.0});
        EXPECT_EQ(a, o);
    }
}

TEST(Ossa, UnitMultipliersBitwiseAdain) {
    SeededRng rng(43);
    const auto x = random_tensor(rng, {2, 3, 5, 5});
    const auto t = random_target(rng, 2, 3);
    const Perturbation ones{ChannelMatrix(2, 3, 1.0), ChannelMatrix(2, 3, 1.0)};
    EXPECT_EQ(ossa_with(x, t, ones), adain(x, t));
}

TEST(Ossa, MatchesOracleWithSharedStream) {
    SeededRng data(44);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_tensor(data, {2, 3, 4, 4});
        const auto t = random_target(data, 1, 3);
        const std::uint64_t seed = 1000 + static_cast<std::uint64_t>(trial);
        SeededRng rng(seed);
        const auto y = ossa::ossa(x, t, rng, NoiseSpec{});

        SeededRng mirror(seed);
        ChannelMatrix alpha(2, 3);
        ChannelMatrix beta(2, 3);
        for (double &a : alpha.data()) a = 1.0 + 0.75 * mirror.normal();
        for (double &b : beta.data()) b = 1.0 + 0.75 * mirror.normal();
        const auto ref = oracle_restyle(x, t, &alpha, &beta);
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], ref.data()[i], 1e-10);
    }
}

TEST(Ossa, ReportsDrawnMultipliers) {
    SeededRng data(45);
    const auto x = random_tensor(data, {3, 2, 6, 6}, 0.5);
    const auto t = random_target(data, 1, 2);
    SeededRng rng(46);
    Perturbation p;
    const auto y = ossa::ossa(x, t, rng, NoiseSpec{}, kDefaultEps, &p);
    ASSERT_EQ(p.alpha.rows(), 3u);
    ASSERT_EQ(p.alpha.cols(), 2u);
    for (std::size_t b = 0; b < 3; ++b) {
        for (std::size_t c = 0; c < 2; ++c) {
            EXPECT_NEAR(oracle_mean(y, b, c), p.beta(b, c) * t.mu(0, c), 1e-4);
            EXPECT_NEAR(std::sqrt(oracle_variance(y, b, c)), std::abs(p.alpha(b, c)) * t.sigma(0, c),
                        1e-4 * std::max(1.0, std::abs(p.alpha(b, c)) * t.sigma(0, c)));
        }
    }
}

TEST(Ossa, FreshMultipliersEachCall) {
    SeededRng data(47);
    const auto x = random_tensor(data, {1, 2, 4, 4});
    const auto t = random_target(data, 1, 2);
    SeededRng rng(48);
    EXPECT_NE(ossa::ossa(x, t, rng, NoiseSpec{}), ossa::ossa(x, t, rng, NoiseSpec{}));
}

TEST(Ossa, OutputMeanUnbiased) {
    SeededRng data(49);
    const auto x = random_tensor(data, {1, 1, 6, 6});
    const ChannelStats t{ChannelMatrix(1, 1, 1.7), ChannelMatrix(1, 1, 0.8)};
    SeededRng rng(50);
    const int n = 4000;
    double s = 0.0;
    double ss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double m = oracle_mean(ossa::ossa(x, t, rng, NoiseSpec{}), 0, 0);
        s += m;
        ss += m * m;
    }
    const double mean = s / n;
    const double se = std::sqrt((ss / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - 1.7), 3.0 * se);
}

TEST(StyleGradient, AdainAndOssa) {
    SeededRng rng(51);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor(rng, {2, 3, 4, 4});
        const auto t = random_target(rng, 1, 3);
        const auto w = random_tensor(rng, x.shape());
        EXPECT_LT(testutil::gradient_error([&](const Tensor4<double> &in) { return adain(in, t); }, x, w,
                                           adain_backward(x, t, w)),
                  1e-6);
        SeededRng noise(100 + static_cast<std::uint64_t>(trial));
        const auto p = sample_perturbation(noise, NoiseSpec{}, 2, 3);
        EXPECT_LT(testutil::gradient_error([&](const Tensor4<double> &in) { return ossa_with(in, t, p); }, x, w,
                                           ossa_backward(x, t, p, w)),
                  1e-6);
    }
}
