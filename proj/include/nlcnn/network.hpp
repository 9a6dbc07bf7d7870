#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "nlcnn/kernels.hpp"
#include "nlcnn/model_plan.hpp"

namespace nlcnn {

struct ReluLayer {};
struct MaxPoolLayer {};
struct FlattenLayer {};
struct GapLayer {};
struct SoftmaxLayer {};

template <typename T>
using Layer = std::variant<ConvKernel<T>, SepConvKernel<T>, ReluLayer, MaxPoolLayer, BatchNormState<T>, FlattenLayer,
                           GapLayer, DenseKernel<T>, SoftmaxLayer>;

// A named view over one parameter array of a layer.
template <typename T>
struct ParamEntry {
    std::string name;
    std::size_t layer;
    std::span<T> values;
};

// Trainable arrays in deterministic order: layer order, weights before bias,
// gamma before beta.
template <typename T>
using ParamRegistry = std::vector<ParamEntry<T>>;

// Gradient arrays congruent with ParamRegistry.
template <typename T>
struct GradientSet {
    std::vector<std::vector<T>> arrays;
};

template <typename T>
struct LayerCache {
    Shape4 input_shape;
    // Kept only by layers whose backward needs it (conv, sepconv, relu, dense).
    Tensor4<T> input;
    PoolArgmax argmax;
    BatchNormCache<T> bn;
    std::optional<BatchNormState<T>> bn_update;
};

template <typename T>
struct ForwardCache {
    std::vector<LayerCache<T>> layers;
};

template <typename T>
struct ForwardResult {
    Tensor4<T> logits;
    ForwardCache<T> cache;
};

template <typename T>
class Network {
public:
    // Glorot-uniform weights, zero biases, identity batch-norm statistics.
    static Network init(const ModelPlan& plan, std::uint64_t seed);

    // Rebuilds a network from arrays in state_arrays() order. Without update
    // counts the moving statistics are taken as fully warmed up.
    static Network from_arrays(const ModelPlan& plan, std::uint64_t seed, std::span<const std::vector<T>> arrays,
                               std::span<const std::uint64_t> bn_updates = {});

    const ModelPlan& plan() const noexcept { return plan_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<Layer<T>>& layers() const noexcept { return layers_; }
    std::vector<Layer<T>>& layers() noexcept { return layers_; }

    // Train mode fills a cache for backward() and records refreshed batch-norm
    // statistics in it; infer mode uses the moving statistics and builds no cache.
    ForwardResult<T> forward(const Tensor4<T>& x, Mode mode) const;
    Tensor4<T> infer(const Tensor4<T>& x) const;

    // Infer-mode output after the first `layer_count` layers.
    Tensor4<T> forward_prefix(const Tensor4<T>& x, std::size_t layer_count) const;

    GradientSet<T> backward(const ForwardCache<T>& cache, const Tensor4<T>& grad_logits) const;

    // Replaces batch-norm moving statistics with those recorded by a train-mode forward.
    void commit_batch_stats(const ForwardCache<T>& cache);

    ParamRegistry<T> registry();
    ParamRegistry<const T> registry() const;
    std::vector<std::size_t> registry_sizes() const;

    // Every stored array including batch-norm moving statistics:
    // weights, bias / depthwise, pointwise, bias / gamma, beta, moving_mean, moving_var.
    std::vector<std::span<const T>> state_arrays() const;

    // Train-mode update count of each batch-norm layer, in layer order.
    std::vector<std::uint64_t> batchnorm_updates() const;

    std::size_t parameter_count() const;
    std::size_t trainable_count() const;

    template <typename U>
    Network<U> cast() const;

private:
    Network() = default;
    void check_input(const Tensor4<T>& x) const;

    ModelPlan plan_;
    std::uint64_t seed_ = 0;
    std::vector<Layer<T>> layers_;
};

extern template class Network<float>;
extern template class Network<double>;

}  // namespace nlcnn
