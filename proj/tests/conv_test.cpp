#include <gtest/gtest.h>

#include "reference_kernels.hpp"
#include "test_support.hpp"

using namespace nlcnn;
using namespace nlcnn::testing;

TEST(Conv2d, IdentityKernelReproducesInput) {
    auto rng = rng_for(1);
    const auto x = random_tensor<double>({2, 5, 4, 1}, rng);
    auto k = ConvKernel<double>::zeros(1, 1);
    k.at(1, 1, 0, 0) = 1.0;
    EXPECT_EQ(conv2d_forward(x, k), x);
}

TEST(Conv2d, ZeroInputGivesBias) {
    auto k = ConvKernel<float>::zeros(3, 2);
    k.bias = {0.5f, -2.0f};
    auto rng = rng_for(2);
    for (auto& w : k.weights) w = float(std::uniform_real_distribution<>(-1, 1)(rng));
    const auto y = conv2d_forward(Tensor4<float>(1, 4, 3, 3), k);
    for (std::size_t p = 0; p < 12; ++p) {
        EXPECT_EQ(y[p * 2], 0.5f);
        EXPECT_EQ(y[p * 2 + 1], -2.0f);
    }
}

TEST(Conv2d, MatchesDirectLoopOracle) {
    auto rng = rng_for(3);
    const auto x = random_tensor<float>({1, 5, 5, 2}, rng);
    ConvKernel<float> k{2, 3, random_vector<float>(54, rng), random_vector<float>(3, rng)};
    const auto fast = conv2d_forward(x, k);
    const auto slow = reference::conv2d_forward(x, k);
    EXPECT_LE(max_abs_diff(fast.values(), slow.values()), 1e-5);
}

TEST(Conv2d, PreservesSpatialDimsForSmallInputs) {
    auto rng = rng_for(4);
    for (std::size_t h = 1; h <= 4; ++h)
        for (std::size_t w = 1; w <= 4; ++w) {
            const auto x = random_tensor<double>({1, h, w, 2}, rng);
            const auto k = random_conv(2, 3, rng);
            const auto y = conv2d_forward(x, k);
            EXPECT_EQ(y.shape(), (Shape4{1, h, w, 3}));
            EXPECT_LE(max_abs_diff(y.values(), reference::conv2d_forward(x, k).values()), 1e-12);
        }
}

TEST(Conv2d, RejectsChannelMismatch) {
    const auto k = ConvKernel<float>::zeros(2, 1);
    EXPECT_THROW(conv2d_forward(Tensor4<float>(1, 3, 3, 3), k), InvalidInput);
    EXPECT_THROW(conv2d_backward(Tensor4<float>(1, 3, 3, 2), k, Tensor4<float>(1, 3, 3, 2)), InvalidInput);
}

TEST(Conv2dBackward, ZeroUpstreamGivesZeroGradients) {
    auto rng = rng_for(5);
    const auto x = random_tensor<double>({2, 4, 4, 2}, rng);
    const auto k = random_conv(2, 3, rng);
    const auto g = conv2d_backward(x, k, Tensor4<double>(2, 4, 4, 3));
    for (double v : g.grad_x.values()) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_weights) EXPECT_EQ(v, 0.0);
    for (double v : g.grad_bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, IdentityKernelPassesGradientThrough) {
    auto rng = rng_for(6);
    const auto x = random_tensor<double>({1, 3, 5, 1}, rng);
    auto k = ConvKernel<double>::zeros(1, 1);
    k.at(1, 1, 0, 0) = 1.0;
    const auto go = random_tensor<double>({1, 3, 5, 1}, rng);
    EXPECT_EQ(conv2d_backward(x, k, go).grad_x, go);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = rng_for(100 + seed);
        Shape4 s = random_shape(rng);
        const std::size_t c_out = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
        auto x = random_tensor<double>(s, rng);
        auto k = random_conv(s.c, c_out, rng);
        const auto go = random_tensor<double>({s.n, s.h, s.w, c_out}, rng);
        auto loss = [&] { return dot(conv2d_forward(x, k), go); };
        const auto g = conv2d_backward(x, k, go);

        EXPECT_LE(relative_error(g.grad_x.values(), numeric_gradient(x.values(), loss)), 1e-5) << "seed " << seed;
        EXPECT_LE(relative_error(g.grad_weights, numeric_gradient(std::span(k.weights), loss)), 1e-5);
        EXPECT_LE(relative_error(g.grad_bias, numeric_gradient(std::span(k.bias), loss)), 1e-5);
    }
}

TEST(Conv2dBackward, MatchesReferenceLoops) {
    auto rng = rng_for(7);
    const auto x = random_tensor<double>({5, 6, 4, 3}, rng);
    const auto k = random_conv(3, 4, rng);
    const auto go = random_tensor<double>({5, 6, 4, 4}, rng);
    const auto fast = conv2d_backward(x, k, go);
    const auto slow = reference::conv2d_backward(x, k, go);
    EXPECT_LE(max_abs_diff(fast.grad_x.values(), slow.grad_x.values()), 1e-12);
    EXPECT_LE(max_abs_diff(fast.grad_weights, slow.grad_weights), 1e-12);
    EXPECT_LE(max_abs_diff(fast.grad_bias, slow.grad_bias), 1e-12);
}

TEST(SepConv2d, IdentityFactorizationReproducesInput) {
    auto rng = rng_for(8);
    const auto x = random_tensor<double>({2, 4, 5, 3}, rng);
    auto k = SepConvKernel<double>::zeros(3, 3);
    for (std::size_t c = 0; c < 3; ++c) {
        k.depthwise[(1 * 3 + 1) * 3 + c] = 1.0;
        k.pointwise[c * 3 + c] = 1.0;
    }
    EXPECT_EQ(sepconv2d_forward(x, k), x);
}

TEST(SepConv2d, EqualsConvWithComposedRankOneKernel) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rng = rng_for(200 + seed);
        const Shape4 s = random_shape(rng);
        const auto x = random_tensor<float>(s, rng);
        const std::size_t c_out = 3;
        SepConvKernel<float> sk{s.c, c_out, random_vector<float>(9 * s.c, rng), random_vector<float>(s.c * c_out, rng),
                                random_vector<float>(c_out, rng)};
        auto ck = ConvKernel<float>::zeros(s.c, c_out);
        ck.bias = sk.bias;
        for (std::size_t di = 0; di < 3; ++di)
            for (std::size_t dj = 0; dj < 3; ++dj)
                for (std::size_t ci = 0; ci < s.c; ++ci)
                    for (std::size_t o = 0; o < c_out; ++o)
                        ck.at(di, dj, ci, o) = sk.depthwise[(di * 3 + dj) * s.c + ci] * sk.pointwise[ci * c_out + o];
        EXPECT_LE(max_abs_diff(sepconv2d_forward(x, sk).values(), conv2d_forward(x, ck).values()), 1e-5);
    }
}

TEST(SepConv2dBackward, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = rng_for(300 + seed);
        const Shape4 s = random_shape(rng);
        const std::size_t c_out = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
        auto x = random_tensor<double>(s, rng);
        auto k = random_sepconv(s.c, c_out, rng);
        const auto go = random_tensor<double>({s.n, s.h, s.w, c_out}, rng);
        auto loss = [&] { return dot(sepconv2d_forward(x, k), go); };
        const auto g = sepconv2d_backward(x, k, go);

        EXPECT_LE(relative_error(g.grad_x.values(), numeric_gradient(x.values(), loss)), 1e-5) << "seed " << seed;
        EXPECT_LE(relative_error(g.grad_depthwise, numeric_gradient(std::span(k.depthwise), loss)), 1e-5);
        EXPECT_LE(relative_error(g.grad_pointwise, numeric_gradient(std::span(k.pointwise), loss)), 1e-5);
        EXPECT_LE(relative_error(g.grad_bias, numeric_gradient(std::span(k.bias), loss)), 1e-5);
    }
}

TEST(SepConv2d, RejectsChannelMismatch) {
    EXPECT_THROW(sepconv2d_forward(Tensor4<float>(1, 3, 3, 1), SepConvKernel<float>::zeros(2, 2)), InvalidInput);
}

TEST(KernelDeterminism, RepeatedCallsAreBitIdentical) {
    auto rng = rng_for(9);
    const auto x = random_tensor<float>({7, 9, 9, 4}, rng);
    ConvKernel<float> k{4, 6, random_vector<float>(9 * 24, rng), random_vector<float>(6, rng)};
    const auto go = random_tensor<float>({7, 9, 9, 6}, rng);
    set_deterministic(true);
    const auto serial = conv2d_backward(x, k, go);
    set_deterministic(false);
    const auto parallel = conv2d_backward(x, k, go);
    EXPECT_EQ(serial.grad_x, parallel.grad_x);
    EXPECT_EQ(serial.grad_weights, parallel.grad_weights);
    EXPECT_EQ(conv2d_forward(x, k), conv2d_forward(x, k));
}
