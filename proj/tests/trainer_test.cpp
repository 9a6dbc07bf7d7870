#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <map>

#include "nlcnn/error.hpp"
#include "nlcnn/trainer.hpp"
#include "test_support.hpp"

using namespace nlcnn;
using namespace nlcnn::testing;

namespace {

ParamRegistry<double> single(std::vector<double>& p) { return {ParamEntry<double>{"p", 0, p}}; }

HyperParams tiny_hp(std::size_t classes = 3) {
    HyperParams hp;
    hp.input_shape = {12, 12, 1};
    hp.num_classes = classes;
    hp.k = 2;
    hp.width = 3;
    hp.nl1 = 1;
    hp.nl2 = 1;
    hp.flat = false;
    return hp;
}

// Class c lights up one of three horizontal bands; noise elsewhere.
LabeledSet banded_set(std::size_t n, std::uint64_t seed) {
    auto rng = rng_for(seed);
    std::uniform_real_distribution<float> noise(0.0f, 0.3f);
    LabeledSet s;
    s.images = Tensor4<float>(Shape4{n, 12, 12, 1});
    s.num_classes = 3;
    s.name = "banded";
    for (std::size_t b = 0; b < n; ++b) {
        const int label = int(b % 3);
        s.labels.push_back(label);
        for (std::size_t i = 0; i < 12; ++i)
            for (std::size_t j = 0; j < 12; ++j)
                s.images(b, i, j, 0) = i / 4 == std::size_t(label) ? 1.0f - noise(rng) : noise(rng);
    }
    return s;
}

double full_train_mode_loss(const Network<float>& net, const LabeledSet& s) {
    return softmax_xent(net.forward(s.images, Mode::train).logits, one_hot(s.labels, s.num_classes)).loss;
}

std::vector<std::vector<float>> snapshot(const Network<float>& net) {
    std::vector<std::vector<float>> out;
    for (auto a : net.state_arrays()) out.emplace_back(a.begin(), a.end());
    return out;
}

}  // namespace

TEST(AdamStep, ZeroGradientLeavesParamsUnchanged) {
    std::vector<double> p{0.5, -1.25, 3.0};
    auto reg = single(p);
    GradientSet<double> g{{std::vector<double>(3, 0.0)}};
    auto moments = AdamMoments<double>::zeros(std::vector<std::size_t>{3});
    for (std::size_t t = 1; t <= 10; ++t) adam_step(reg, g, moments, t, TrainConfig{});
    EXPECT_EQ(p, (std::vector<double>{0.5, -1.25, 3.0}));
}

TEST(AdamStep, ConstantGradientStepsApproachLearningRate) {
    std::vector<double> p{0.0};
    auto reg = single(p);
    GradientSet<double> g{{{0.5}}};
    auto moments = AdamMoments<double>::zeros(std::vector<std::size_t>{1});
    TrainConfig cfg;
    double prev = p[0], step = 0.0;
    for (std::size_t t = 1; t <= 2000; ++t) {
        adam_step(reg, g, moments, t, cfg);
        step = prev - p[0];
        ASSERT_GT(step, 0.0) << "parameter must move against the gradient sign";
        prev = p[0];
    }
    EXPECT_NEAR(step, cfg.learning_rate, 1e-9);
}

TEST(AdamStep, ThreeStepScalarTraceMatchesReference) {
    const double grads[] = {0.3, -1.7, 0.05};
    TrainConfig cfg;
    cfg.learning_rate = 0.01;

    // Reference written directly from the update rule.
    long double ref = 0.8L, m = 0, v = 0;
    std::vector<long double> ref_trace;
    for (int t = 1; t <= 3; ++t) {
        const long double gt = grads[t - 1];
        m = 0.9L * m + 0.1L * gt;
        v = 0.999L * v + 0.001L * gt * gt;
        const long double mh = m / (1 - std::pow(0.9L, t));
        const long double vh = v / (1 - std::pow(0.999L, t));
        ref -= 0.01L * mh / (std::sqrt(vh) + 1e-7L);
        ref_trace.push_back(ref);
    }

    std::vector<double> p{0.8};
    auto reg = single(p);
    auto moments = AdamMoments<double>::zeros(std::vector<std::size_t>{1});
    for (std::size_t t = 1; t <= 3; ++t) {
        GradientSet<double> g{{{grads[t - 1]}}};
        adam_step(reg, g, moments, t, cfg);
        EXPECT_NEAR(p[0], double(ref_trace[t - 1]), 1e-12) << "step " << t;
    }
}

TEST(AdamStep, NonFiniteGradientNamesArray) {
    std::vector<double> p{1.0, 2.0};
    ParamRegistry<double> reg{{"layer3_conv.bias", 3, p}};
    GradientSet<double> g{{{0.1, std::nan("")}}};
    auto moments = AdamMoments<double>::zeros(std::vector<std::size_t>{2});
    try {
        adam_step(reg, g, moments, 1, TrainConfig{});
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("layer3_conv.bias"), std::string::npos);
    }
    EXPECT_EQ(p, (std::vector<double>{1.0, 2.0}));
}

TEST(AdamStep, RejectsBadStepAndIncongruentMoments) {
    std::vector<double> p{1.0};
    auto reg = single(p);
    GradientSet<double> g{{{0.1}}};
    auto moments = AdamMoments<double>::zeros(std::vector<std::size_t>{1});
    EXPECT_THROW(adam_step(reg, g, moments, 0, TrainConfig{}), InvalidInput);
    auto wrong = AdamMoments<double>::zeros(std::vector<std::size_t>{2});
    EXPECT_THROW(adam_step(reg, g, wrong, 1, TrainConfig{}), InvalidInput);
}

TEST(TrainConfigCheck, RejectsInvalidValues) {
    TrainConfig cfg;
    cfg.batch_size = 0;
    EXPECT_THROW(validate(cfg), ConfigError);
    cfg = {};
    cfg.beta1 = 1.0;
    EXPECT_THROW(validate(cfg), ConfigError);
    cfg = {};
    cfg.beta2 = 0.0;
    EXPECT_THROW(validate(cfg), ConfigError);
    EXPECT_NO_THROW(validate(TrainConfig{}));
}

TEST(Shuffle, PermutationFrequenciesAreUniform) {
    std::mt19937_64 rng(1);
    std::map<std::vector<std::size_t>, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++counts[shuffled_indices(4, rng)];
    ASSERT_EQ(counts.size(), 24u);
    const double p = 1.0 / 24.0, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [perm, c] : counts) EXPECT_LE(std::abs(c - mean), 3 * sigma);
}

// Same check with 100x the draws; a biased shuffle would stand out here.
TEST(Shuffle, PermutationFrequenciesAreUniformAtScale) {
    std::mt19937_64 rng(99);
    std::map<std::vector<std::size_t>, int> counts;
    const int draws = 1000000;
    for (int i = 0; i < draws; ++i) ++counts[shuffled_indices(4, rng)];
    ASSERT_EQ(counts.size(), 24u);
    const double p = 1.0 / 24.0, mean = draws * p, sigma = std::sqrt(draws * p * (1 - p));
    for (const auto& [perm, c] : counts) EXPECT_LE(std::abs(c - mean), 3 * sigma);
}

TEST(Shuffle, SeededAndComplete) {
    std::mt19937_64 a(5), b(5);
    const auto x = shuffled_indices(100, a);
    EXPECT_EQ(x, shuffled_indices(100, b));
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Evaluate, ArgmaxTiesGoToLowestIndex) {
    const float row[] = {0.5f, 2.0f, 2.0f, -1.0f};
    EXPECT_EQ(argmax_row(row), 1u);
    const float flat[] = {0.0f, 0.0f, 0.0f};
    EXPECT_EQ(argmax_row(flat), 0u);
}

namespace {

// 8x8x1 input, one filter per macro-layer, identity convs, GAP head. A
// constant image of value v reaches the dense layer as v / 1.001^1.5.
Network<float> threshold_net(std::size_t classes, std::vector<float> dense_w, std::vector<float> dense_b) {
    HyperParams hp;
    hp.input_shape = {8, 8, 1};
    hp.num_classes = classes;
    hp.k = 1;
    hp.width = 1;
    hp.nl1 = 1;
    hp.nl2 = 1;
    hp.flat = false;
    auto net = Network<float>::init(build_plan(hp), 0);
    for (auto& layer : net.layers()) {
        if (auto* c = std::get_if<ConvKernel<float>>(&layer)) {
            std::fill(c->weights.begin(), c->weights.end(), 0.0f);
            c->at(1, 1, 0, 0) = 1.0f;
        }
        if (auto* d = std::get_if<DenseKernel<float>>(&layer)) {
            d->weights = dense_w;
            d->bias = dense_b;
        }
    }
    return net;
}

LabeledSet constant_images(std::vector<float> values, std::vector<int> labels, std::size_t classes) {
    LabeledSet s;
    s.images = Tensor4<float>(Shape4{values.size(), 8, 8, 1});
    for (std::size_t b = 0; b < values.size(); ++b)
        for (std::size_t i = 0; i < 64; ++i) s.images[b * 64 + i] = values[b];
    s.labels = std::move(labels);
    s.num_classes = classes;
    s.name = "fixture";
    return s;
}

}  // namespace

TEST(Evaluate, FiveSampleFixtureMatchesHandCount) {
    // logits (s, 1 - s): class 0 iff s > 0.5.
    const auto net = threshold_net(2, {1.0f, -1.0f}, {0.0f, 1.0f});
    // predictions: 1, 0, 0, 1, 0 against labels 1, 0, 1, 1, 1 -> 3 correct
    const auto set = constant_images({0.1f, 0.9f, 0.6f, 0.3f, 1.0f}, {1, 0, 1, 1, 1}, 2);
    const auto r = evaluate(net, set, 2);
    EXPECT_EQ(r.correct, 3u);
    EXPECT_EQ(r.total, 5u);
    EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
}

TEST(Evaluate, UniformLogitsOnBalancedSetGiveOneTenth) {
    const auto net = threshold_net(10, std::vector<float>(10, 0.0f), std::vector<float>(10, 0.0f));
    std::vector<float> values;
    std::vector<int> labels;
    for (int i = 0; i < 50; ++i) {
        values.push_back(0.02f * float(i));
        labels.push_back(i % 10);
    }
    const auto r = evaluate(net, constant_images(values, labels, 10));
    EXPECT_DOUBLE_EQ(r.accuracy, 0.1);
    EXPECT_NEAR(r.loss, std::log(10.0), 1e-6);
}

TEST(Evaluate, PerfectLogitsGiveFullAccuracy) {
    const auto net = threshold_net(2, {1.0f, -1.0f}, {0.0f, 1.0f});
    const auto r = evaluate(net, constant_images({0.9f, 0.1f, 0.8f}, {0, 1, 0}, 2));
    EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
}

TEST(Train, DeterministicRunsAreBitIdentical) {
    const auto train_set = banded_set(40, 1), test_set = banded_set(15, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 3;
    cfg.deterministic = true;
    auto a = Network<float>::init(build_plan(tiny_hp()), 3);
    auto b = Network<float>::init(build_plan(tiny_hp()), 3);
    const auto ma = train(a, train_set, test_set, cfg);
    const auto mb = train(b, train_set, test_set, cfg);
    EXPECT_EQ(ma.to_csv(false), mb.to_csv(false));
    EXPECT_EQ(snapshot(a), snapshot(b));
    EXPECT_FALSE(deterministic());
}

TEST(Train, MetricsRowsAreWellFormed) {
    const auto train_set = banded_set(30, 4), test_set = banded_set(9, 5);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 7;
    auto net = Network<float>::init(build_plan(tiny_hp()), 1);
    std::vector<std::size_t> seen;
    const auto m = train(net, train_set, test_set, cfg, [&](const EpochRow& r) { seen.push_back(r.epoch); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
    ASSERT_EQ(m.rows.size(), 2u);
    double total = 0.0;
    for (const auto& r : m.rows) {
        EXPECT_GE(r.train_acc, 0.0);
        EXPECT_LE(r.train_acc, 1.0);
        EXPECT_GE(r.test_acc, 0.0);
        EXPECT_LE(r.test_acc, 1.0);
        EXPECT_GE(r.wall_seconds, 0.0);
        EXPECT_DOUBLE_EQ(r.train_acc * 30, std::round(r.train_acc * 30));
        total += r.wall_seconds;
    }
    EXPECT_DOUBLE_EQ(m.total_train_seconds, total);
    EXPECT_EQ(m.param_total, net.parameter_count());
    EXPECT_EQ(m.to_csv().substr(0, 45), "epoch,train_loss,train_acc,test_acc,wall_seco");
}

TEST(Train, FirstEpochReducesLoss) {
    const auto train_set = banded_set(60, 6), test_set = banded_set(6, 7);
    auto net = Network<float>::init(build_plan(tiny_hp()), 2);
    const double before = full_train_mode_loss(net, train_set);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 10;
    cfg.learning_rate = 1e-2;
    train(net, train_set, test_set, cfg);
    EXPECT_LT(full_train_mode_loss(net, train_set), before);
}

TEST(Train, ZeroLearningRateKeepsTrainableParams) {
    const auto train_set = banded_set(20, 8);
    auto net = Network<float>::init(build_plan(tiny_hp()), 4);
    std::vector<std::vector<float>> before;
    for (const auto& e : std::as_const(net).registry()) before.emplace_back(e.values.begin(), e.values.end());
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 6;
    cfg.learning_rate = 0.0;
    train(net, train_set, train_set, cfg);
    const auto after = std::as_const(net).registry();
    for (std::size_t i = 0; i < before.size(); ++i)
        EXPECT_TRUE(std::equal(before[i].begin(), before[i].end(), after[i].values.begin(), after[i].values.end()))
            << after[i].name;
}

TEST(Train, MismatchedDatasetFailsBeforeAnyStep) {
    auto net = Network<float>::init(build_plan(tiny_hp()), 4);
    const auto initial = snapshot(net);
    auto wrong_labels = banded_set(10, 1);
    wrong_labels.labels[3] = 7;
    EXPECT_THROW(train(net, wrong_labels, banded_set(3, 2), TrainConfig{}), ConfigError);
    LabeledSet wrong_shape;
    wrong_shape.images = Tensor4<float>(Shape4{2, 8, 8, 1});
    wrong_shape.labels = {0, 1};
    wrong_shape.num_classes = 3;
    EXPECT_THROW(train(net, wrong_shape, banded_set(3, 2), TrainConfig{}), ConfigError);
    EXPECT_THROW(train(net, banded_set(6, 1), wrong_shape, TrainConfig{}), ConfigError);
    EXPECT_EQ(snapshot(net), initial);
}

TEST(Train, NonFiniteInputRaisesNumericError) {
    auto net = Network<float>::init(build_plan(tiny_hp()), 4);
    auto set = banded_set(6, 1);
    set.images[5] = std::numeric_limits<float>::infinity();
    TrainSession session(net, TrainConfig{});
    EXPECT_THROW(session.step(set.images, set.labels), NumericError);
}

TEST(Train, OverfitsSixtyFourMnistDigits) {
    const auto full = load_split(DatasetKind::idx, NLCNN_MNIST_SUBSET_DIR, Split::train);
    const auto small = full.head(64);
    HyperParams hp;
    hp.k = 2;
    hp.width = 10;
    hp.nl1 = 2;
    hp.nl2 = 2;
    hp.flat = true;
    auto net = Network<float>::init(build_plan(hp), 0);
    TrainSession session(net, TrainConfig{});
    std::size_t correct = 0;
    while (session.steps() < 200 && correct < 64) correct = session.step(small.images, small.labels).correct;
    EXPECT_EQ(correct, 64u) << "after " << session.steps() << " steps";
}
