#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nlcnn/datasets.hpp"
#include "nlcnn/network.hpp"

namespace nlcnn {

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 500;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-7;
    std::uint64_t seed = 0;
    bool deterministic = false;
};

void validate(const TrainConfig& cfg);

struct EpochRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double wall_seconds = 0.0;
};

struct RunMetrics {
    std::vector<EpochRow> rows;
    double best_test_acc = 0.0;
    double total_train_seconds = 0.0;
    std::size_t param_total = 0;

    // Header: epoch,train_loss,train_acc,test_acc,wall_seconds. With
    // include_timing = false the time column is written as 0 so that
    // deterministic runs produce byte-identical files.
    std::string to_csv(bool include_timing = true) const;
};

template <typename T>
struct AdamMoments {
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    static AdamMoments zeros(std::span<const std::size_t> sizes);
};

// One bias-corrected Adam update at step t (1-based). Throws NumericError
// naming the offending array if a gradient is not finite.
template <typename T>
void adam_step(ParamRegistry<T>& registry, const GradientSet<T>& grads, AdamMoments<T>& moments, std::size_t t,
               const TrainConfig& cfg);

struct StepResult {
    double loss = 0.0;
    std::size_t correct = 0;
    std::size_t count = 0;
};

// Owns the optimizer state for one training run over a float network.
class TrainSession {
public:
    TrainSession(Network<float>& net, const TrainConfig& cfg);

    // forward -> softmax cross-entropy -> backward -> Adam on one batch.
    StepResult step(const Tensor4<float>& x, std::span<const int> labels);

    std::size_t steps() const noexcept { return t_; }

private:
    Network<float>& net_;
    TrainConfig cfg_;
    AdamMoments<float> moments_;
    std::size_t t_ = 0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::size_t correct = 0;
    std::size_t total = 0;
};

// Index of the largest logit; ties go to the lowest class index.
std::size_t argmax_row(std::span<const float> row);

EvalResult evaluate(const Network<float>& net, const LabeledSet& data, std::size_t batch_size = 500);

// Uniform random permutation of 0..n-1 drawn from rng.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng);

// Checks that the dataset matches the model input and class count; throws ConfigError.
void check_dataset(const ModelPlan& plan, const LabeledSet& data);

RunMetrics train(Network<float>& net, const LabeledSet& train_set, const LabeledSet& test_set, const TrainConfig& cfg,
                 const std::function<void(const EpochRow&)>& on_epoch = {});

}  // namespace nlcnn
