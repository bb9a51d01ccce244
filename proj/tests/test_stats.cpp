#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ossa/stats.hpp"
#include "test_util.hpp"

using namespace ossa;
using testutil::oracle_mean;
using testutil::oracle_variance;
using testutil::random_shape;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

Tensor4<double> small_map() { return Tensor4<double>({1, 1, 2, 2}, {1.0, 2.0, 3.0, 5.0}); }

} // namespace

TEST(ChannelMean, ConstantMap) {
    const Tensor4<double> x({2, 3, 4, 5}, 5.0);
    const ChannelMatrix mu = channel_mean(x);
    for (double v : mu.data()) EXPECT_DOUBLE_EQ(v, 5.0);
}

TEST(ChannelMean, SmallMapByHand) {
    EXPECT_DOUBLE_EQ(channel_mean(small_map())(0, 0), (1.0 + 2.0 + 3.0 + 5.0) / 4.0);
    EXPECT_DOUBLE_EQ(channel_mean(small_map())(0, 0), 2.75);
}

TEST(ChannelStd, SmallMapByHand) {
    const double var = ((1 - 2.75) * (1 - 2.75) + (2 - 2.75) * (2 - 2.75) + (3 - 2.75) * (3 - 2.75) +
                        (5 - 2.75) * (5 - 2.75)) /
                       4.0;
    EXPECT_DOUBLE_EQ(var, 2.1875);
    const double sd = channel_std(small_map())(0, 0);
    EXPECT_NEAR(sd, std::sqrt(2.1875 + 1e-5), 1e-12);
    EXPECT_NEAR(sd, 1.4790, 1e-4);
}

TEST(ChannelStd, ConstantMapGivesSqrtEps) {
    const Tensor4<double> x({1, 2, 3, 3}, -4.0);
    const ChannelMatrix sd = channel_std(x, 1e-5);
    for (double v : sd.data()) EXPECT_NEAR(v, std::sqrt(1e-5), 1e-12);
}

TEST(InstanceNormalize, SmallMapByHand) {
    const Tensor4<double> y = instance_normalize(small_map());
    const double sd = std::sqrt(2.1875 + 1e-5);
    const double expected[] = {(1 - 2.75) / sd, (2 - 2.75) / sd, (3 - 2.75) / sd, (5 - 2.75) / sd};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.data()[i], expected[i], 1e-12);
}

TEST(InstanceNormalize, ConstantMapGivesZeros) {
    const Tensor4<double> y = instance_normalize(Tensor4<double>({2, 2, 3, 4}, 7.5));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(InstanceNormalize, NormalizedStatistics) {
    SeededRng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 4, 6, 9, 9));
        if (x.shape().plane() < 2) continue;
        const Tensor4<double> y = instance_normalize(x);
        const ChannelMatrix mu = channel_mean(y);
        for (double m : mu.data()) EXPECT_NEAR(m, 0.0, 1e-5);
        const auto sd = channel_std(y);
        for (std::size_t b = 0; b < x.shape().batch; ++b) {
            for (std::size_t c = 0; c < x.shape().channels; ++c) {
                const double v = oracle_variance(x, b, c);
                EXPECT_NEAR(sd(b, c), std::sqrt(v / (v + kDefaultEps) + kDefaultEps), 1e-6);
                if (v > 0.1) EXPECT_NEAR(sd(b, c), 1.0, 1e-4);
            }
        }
    }
}

TEST(InstanceNormalize, IdempotentOnNormalizedInput) {
    SeededRng rng(12);
    const auto x = instance_normalize(random_tensor(rng, {2, 3, 8, 8}));
    const auto y = instance_normalize(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x.data()[i], y.data()[i], 1e-4);
}

TEST(Stats, MatchScalarOracle) {
    SeededRng rng(13);
    for (int trial = 0; trial < 200; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 4, 8, 16, 16));
        const ChannelStats st = channel_stats(x);
        const ChannelMatrix mu = channel_mean(x);
        const ChannelMatrix sd = channel_std(x);
        for (std::size_t b = 0; b < x.shape().batch; ++b) {
            for (std::size_t c = 0; c < x.shape().channels; ++c) {
                const double m = oracle_mean(x, b, c);
                const double s = std::sqrt(oracle_variance(x, b, c) + kDefaultEps);
                EXPECT_LT(rel_err(mu(b, c), m, 1e-9), 1e-10);
                EXPECT_LT(rel_err(sd(b, c), s), 1e-10);
                EXPECT_EQ(st.mu(b, c), mu(b, c));
                EXPECT_EQ(st.sigma(b, c), sd(b, c));
            }
        }
    }
}

TEST(Stats, FloatInputAccumulatesInDouble) {
    Tensor4<float> x({1, 1, 64, 64});
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = 1000.0f + static_cast<float>(i % 2);
    EXPECT_NEAR(channel_mean(x)(0, 0), 1000.5, 1e-9);
    EXPECT_NEAR(channel_std(x)(0, 0), std::sqrt(0.25 + 1e-5), 1e-9);
}

TEST(Stats, ShapePreservation) {
    SeededRng rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        const Shape4 s = random_shape(rng, 5, 7, 6, 11);
        const auto x = random_tensor(rng, s);
        const auto mu = channel_mean(x);
        EXPECT_EQ(mu.rows(), s.batch);
        EXPECT_EQ(mu.cols(), s.channels);
        const auto sd = channel_std(x);
        EXPECT_EQ(sd.rows(), s.batch);
        EXPECT_EQ(sd.cols(), s.channels);
        EXPECT_EQ(instance_normalize(x).shape(), s);
    }
}

TEST(Stats, Recomposition) {
    SeededRng rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 3, 4, 8, 8));
        const auto st = channel_stats(x);
        const auto y = instance_normalize(x);
        const Shape4 &s = x.shape();
        for (std::size_t b = 0; b < s.batch; ++b) {
            for (std::size_t c = 0; c < s.channels; ++c) {
                auto xp = x.plane(b, c);
                auto yp = y.plane(b, c);
                for (std::size_t i = 0; i < xp.size(); ++i) {
                    const double back = st.sigma(b, c) * yp[i] + st.mu(b, c);
                    EXPECT_LT(rel_err(back, xp[i], 1.0), 1e-4);
                }
            }
        }
    }
}

TEST(Stats, AffineCovariance) {
    SeededRng rng(16);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = random_tensor(rng, random_shape(rng, 3, 4, 8, 8), 0.5);
        const double a = rng.uniform(-3.0, 3.0);
        const double k = rng.uniform(-5.0, 5.0);
        Tensor4<double> y = x;
        for (double &v : y.data()) v = a * v + k;
        const auto mx = channel_mean(x);
        const auto my = channel_mean(y);
        const auto sx = channel_std(x);
        const auto sy = channel_std(y);
        for (std::size_t i = 0; i < mx.size(); ++i) {
            EXPECT_NEAR(my.data()[i], a * mx.data()[i] + k, 1e-9);
            const double vx = sx.data()[i] * sx.data()[i] - kDefaultEps;
            EXPECT_NEAR(sy.data()[i], std::sqrt(a * a * vx + kDefaultEps), 1e-9);
        }
    }
}

TEST(Stats, RejectsNonFinite) {
    Tensor4<double> x({1, 2, 2, 2}, 1.0);
    x(0, 1, 1, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW((void)channel_mean(x), InvalidInput);
    EXPECT_THROW((void)channel_std(x), InvalidInput);
    EXPECT_THROW((void)instance_normalize(x), InvalidInput);
    x(0, 1, 1, 0) = std::numeric_limits<double>::infinity();
    EXPECT_THROW((void)channel_stats(x), InvalidInput);
}

TEST(Stats, RejectsBadEps) {
    const Tensor4<double> x({1, 1, 2, 2}, 1.0);
    EXPECT_THROW((void)channel_std(x, 0.0), InvalidInput);
    EXPECT_THROW((void)instance_normalize(x, -1.0), InvalidInput);
}

TEST(StatsGradient, InstanceNormalize) {
    SeededRng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor(rng, {2, 3, 4, 4});
        const auto w = random_tensor(rng, x.shape());
        const auto analytic = instance_normalize_backward(x, w);
        const double err = testutil::gradient_error([](const Tensor4<double> &in) { return instance_normalize(in); },
                                                    x, w, analytic);
        EXPECT_LT(err, 1e-6);
    }
}

TEST(StatsGradient, MeanAndStd) {
    SeededRng rng(18);
    for (int trial = 0; trial < 10; ++trial) {
        const auto x = random_tensor(rng, {2, 3, 4, 5});
        const ChannelMatrix g = testutil::random_matrix(rng, 2, 3, -1.0, 1.0);
        const Tensor4<double> gw({2, 3, 1, 1}, std::vector<double>(g.data().begin(), g.data().end()));
        auto as_map = [](const ChannelMatrix &m) {
            return Tensor4<double>({m.rows(), m.cols(), 1, 1}, std::vector<double>(m.data().begin(), m.data().end()));
        };
        const auto dmu = channel_mean_backward<double>(x.shape(), g);
        EXPECT_LT(testutil::gradient_error([&](const Tensor4<double> &in) { return as_map(channel_mean(in)); }, x, gw,
                                           dmu),
                  1e-6);
        const auto dsd = channel_std_backward(x, g);
        EXPECT_LT(testutil::gradient_error([&](const Tensor4<double> &in) { return as_map(channel_std(in)); }, x, gw,
                                           dsd),
                  1e-6);
    }
}
