#include <gtest/gtest.h>

#include "reference_kernels.hpp"
#include "test_support.hpp"

using namespace nlcnn;
using namespace nlcnn::testing;

TEST(Relu, NegativeInputsBecomeZero) {
    const auto y = relu_forward(Tensor4<float>(Shape4{1, 2, 2, 1}, -3.0f));
    for (float v : y.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Relu, NonNegativeInputsUnchanged) {
    auto rng = rng_for(30);
    const auto x = random_tensor<float>({2, 3, 3, 2}, rng, 0.0, 2.0);
    EXPECT_EQ(relu_forward(x), x);
}

TEST(Relu, SubgradientAtZeroIsZero) {
    Tensor4<double> x(1, 1, 1, 2);
    x[1] = 1.0;
    const auto g = relu_backward(x, Tensor4<double>(Shape4{1, 1, 1, 2}, 1.0));
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[1], 1.0);
}

TEST(ReluBackward, MatchesFiniteDifferencesAwayFromZero) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = rng_for(700 + seed);
        const Shape4 s = random_shape(rng);
        auto x = kink_free_tensor(s, rng);
        const auto go = random_tensor<double>(s, rng);
        auto loss = [&] { return dot(relu_forward(x), go); };
        EXPECT_LE(relative_error(relu_backward(x, go).values(), numeric_gradient(x.values(), loss)), 1e-5);
    }
}

TEST(GlobalAvgPool, ConstantInputGivesConstant) {
    const auto y = global_avg_pool(Tensor4<float>(Shape4{2, 3, 5, 4}, 1.5f));
    EXPECT_EQ(y.shape(), (Shape4{2, 1, 1, 4}));
    for (float v : y.values()) EXPECT_FLOAT_EQ(v, 1.5f);
}

TEST(GlobalAvgPoolBackward, SpreadsUniformly) {
    const Shape4 in{1, 2, 3, 2};
    Tensor4<double> go(1, 1, 1, 2);
    go[0] = 6.0;
    go[1] = -12.0;
    const auto g = global_avg_pool_backward(in, go);
    for (std::size_t p = 0; p < 6; ++p) {
        EXPECT_DOUBLE_EQ(g[p * 2], 1.0);
        EXPECT_DOUBLE_EQ(g[p * 2 + 1], -2.0);
    }
}

TEST(GlobalAvgPoolBackward, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = rng_for(800 + seed);
        const Shape4 s = random_shape(rng);
        auto x = random_tensor<double>(s, rng);
        const auto go = random_tensor<double>({s.n, 1, 1, s.c}, rng);
        auto loss = [&] { return dot(global_avg_pool(x), go); };
        EXPECT_LE(relative_error(global_avg_pool_backward(s, go).values(), numeric_gradient(x.values(), loss)), 1e-5);
    }
}

TEST(Flatten, RoundTripIsIdentity) {
    auto rng = rng_for(31);
    const auto x = random_tensor<float>({3, 4, 2, 5}, rng);
    const auto f = flatten(x);
    EXPECT_EQ(f.shape(), (Shape4{3, 1, 1, 40}));
    EXPECT_EQ(unflatten(f, x.shape()), x);
    EXPECT_THROW(unflatten(f, Shape4{3, 4, 2, 4}), InvalidInput);
}

TEST(FlattenBackward, MatchesFiniteDifferences) {
    auto rng = rng_for(32);
    auto x = random_tensor<double>({2, 3, 2, 2}, rng);
    const auto go = random_tensor<double>({2, 1, 1, 12}, rng);
    auto loss = [&] { return dot(flatten(x), go); };
    EXPECT_LE(relative_error(unflatten(go, x.shape()).values(), numeric_gradient(x.values(), loss)), 1e-5);
}

TEST(Dense, IdentityBlockPassesThrough) {
    auto rng = rng_for(33);
    const auto x = random_tensor<double>({4, 1, 1, 3}, rng);
    auto k = DenseKernel<double>::zeros(3, 3);
    for (std::size_t i = 0; i < 3; ++i) k.weights[i * 3 + i] = 1.0;
    EXPECT_EQ(dense_forward(x, k), x);
}

TEST(Dense, ZeroInputGivesBias) {
    auto k = DenseKernel<float>::zeros(5, 2);
    k.bias = {1.0f, -1.0f};
    k.weights.assign(10, 0.3f);
    const auto y = dense_forward(Tensor4<float>(2, 1, 1, 5), k);
    EXPECT_EQ(y(1, 0, 0, 0), 1.0f);
    EXPECT_EQ(y(1, 0, 0, 1), -1.0f);
}

TEST(Dense, MatchesReferenceLoops) {
    auto rng = rng_for(34);
    const auto x = random_tensor<float>({6, 1, 1, 17}, rng);
    DenseKernel<float> k{17, 5, random_vector<float>(85, rng), random_vector<float>(5, rng)};
    EXPECT_LE(max_abs_diff(dense_forward(x, k).values(), reference::dense_forward(x, k).values()), 1e-5);
}

TEST(DenseBackward, MatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = rng_for(900 + seed);
        const std::size_t n = 1 + seed % 4, in = 2 + seed % 5, out = 2 + seed % 3;
        auto x = random_tensor<double>({n, 1, 1, in}, rng);
        DenseKernel<double> k{in, out, random_vector<double>(in * out, rng), random_vector<double>(out, rng)};
        const auto go = random_tensor<double>({n, 1, 1, out}, rng);
        auto loss = [&] { return dot(dense_forward(x, k), go); };
        const auto g = dense_backward(x, k, go);
        EXPECT_LE(relative_error(g.grad_x.values(), numeric_gradient(x.values(), loss)), 1e-5);
        EXPECT_LE(relative_error(g.grad_weights, numeric_gradient(std::span(k.weights), loss)), 1e-5);
        EXPECT_LE(relative_error(g.grad_bias, numeric_gradient(std::span(k.bias), loss)), 1e-5);
    }
}

TEST(Dense, RejectsWrongFeatureCount) {
    EXPECT_THROW(dense_forward(Tensor4<float>(1, 1, 1, 4), DenseKernel<float>::zeros(3, 2)), InvalidInput);
}

namespace {
Tensor4<double> one_hot_rows(std::initializer_list<std::size_t> labels, std::size_t classes) {
    Tensor4<double> y(labels.size(), 1, 1, classes);
    std::size_t i = 0;
    for (auto l : labels) y(i++, 0, 0, l) = 1.0;
    return y;
}
}  // namespace

TEST(SoftmaxXent, UniformLogitsGiveLogC) {
    const std::size_t classes = 7;
    const auto r = softmax_xent(Tensor4<double>(3, 1, 1, classes), one_hot_rows({0, 3, 6}, classes));
    EXPECT_NEAR(r.loss, std::log(double(classes)), 1e-12);
    for (double p : r.probs.values()) EXPECT_NEAR(p, 1.0 / classes, 1e-12);
}

TEST(SoftmaxXent, SaturatedCorrectLogitGivesNearZeroLoss) {
    Tensor4<double> z(1, 1, 1, 4);
    z[2] = 1000.0;
    const auto r = softmax_xent(z, one_hot_rows({2}, 4));
    EXPECT_NEAR(r.loss, 0.0, 1e-12);
    EXPECT_TRUE(r.probs.all_finite());
}

TEST(SoftmaxXent, RowsSumToOneAndLossNonNegative) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto rng = rng_for(1000 + seed);
        const auto z = random_tensor<float>({4, 1, 1, 10}, rng, -20.0, 20.0);
        Tensor4<float> y(4, 1, 1, 10);
        for (std::size_t b = 0; b < 4; ++b) y(b, 0, 0, (seed + b) % 10) = 1.0f;
        const auto r = softmax_xent(z, y);
        EXPECT_GE(r.loss, 0.0);
        for (std::size_t b = 0; b < 4; ++b) {
            double s = 0;
            for (float p : r.probs.sample(b)) s += p;
            EXPECT_NEAR(s, 1.0, 1e-6);
        }
    }
}

TEST(SoftmaxXent, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto rng = rng_for(1100 + seed);
        auto z = random_tensor<double>({3, 1, 1, 5}, rng, -3.0, 3.0);
        const auto y = one_hot_rows({seed % 5, (seed + 1) % 5, (seed + 3) % 5}, 5);
        auto loss = [&] { return softmax_xent(z, y).loss; };
        EXPECT_LE(relative_error(softmax_xent(z, y).grad_logits.values(), numeric_gradient(z.values(), loss)), 1e-5);
    }
}

TEST(SoftmaxXent, RejectsNonOneHotLabels) {
    Tensor4<double> y(1, 1, 1, 3);
    y[0] = 0.5;
    y[1] = 0.5;
    EXPECT_THROW(softmax_xent(Tensor4<double>(1, 1, 1, 3), y), InvalidInput);
    EXPECT_THROW(softmax_xent(Tensor4<double>(1, 1, 1, 3), Tensor4<double>(1, 1, 1, 3)), InvalidInput);
}
