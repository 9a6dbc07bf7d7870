#include "nlcnn/network.hpp"

#include <cmath>
#include <random>
#include <type_traits>

namespace nlcnn {

namespace {

template <class... Fs>
struct overloaded : Fs... {
    using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

// Portable uniform draw in [-limit, limit) from 53 random bits.
template <typename T>
void glorot_fill(std::vector<T>& out, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : out) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = static_cast<T>((2.0 * u - 1.0) * limit);
    }
}

template <typename T>
Layer<T> make_layer(const LayerSpec& spec) {
    switch (spec.kind) {
        case LayerKind::conv: return ConvKernel<T>::zeros(spec.c_in, spec.c_out);
        case LayerKind::sepconv: return SepConvKernel<T>::zeros(spec.c_in, spec.c_out);
        case LayerKind::relu: return ReluLayer{};
        case LayerKind::maxpool: return MaxPoolLayer{};
        case LayerKind::batchnorm: return BatchNormState<T>::identity(spec.c_out);
        case LayerKind::flatten: return FlattenLayer{};
        case LayerKind::gap: return GapLayer{};
        case LayerKind::dense: return DenseKernel<T>::zeros(spec.c_in, spec.c_out);
        case LayerKind::softmax: return SoftmaxLayer{};
    }
    throw ConfigError("unknown layer kind");
}

template <typename T>
std::vector<std::span<T>> arrays_of(Layer<T>& layer, bool with_moving) {
    return std::visit(
        overloaded{
            [](ConvKernel<T>& k) { return std::vector<std::span<T>>{k.weights, k.bias}; },
            [](SepConvKernel<T>& k) { return std::vector<std::span<T>>{k.depthwise, k.pointwise, k.bias}; },
            [with_moving](BatchNormState<T>& s) {
                if (with_moving) return std::vector<std::span<T>>{s.gamma, s.beta, s.moving_mean, s.moving_var};
                return std::vector<std::span<T>>{s.gamma, s.beta};
            },
            [](DenseKernel<T>& k) { return std::vector<std::span<T>>{k.weights, k.bias}; },
            [](auto&) { return std::vector<std::span<T>>{}; },
        },
        layer);
}

const char* const kConvNames[] = {"weights", "bias"};
const char* const kSepNames[] = {"depthwise", "pointwise", "bias"};
const char* const kBnNames[] = {"gamma", "beta", "moving_mean", "moving_var"};

template <typename T>
const char* array_name(const Layer<T>& layer, std::size_t i) {
    if (std::holds_alternative<SepConvKernel<T>>(layer)) return kSepNames[i];
    if (std::holds_alternative<BatchNormState<T>>(layer)) return kBnNames[i];
    return kConvNames[i];
}

}  // namespace

template <typename T>
Network<T> Network<T>::init(const ModelPlan& plan, std::uint64_t seed) {
    Network net;
    net.plan_ = plan;
    net.seed_ = seed;
    std::mt19937_64 rng(seed);
    for (const LayerSpec& spec : plan.layers) {
        Layer<T> layer = make_layer<T>(spec);
        std::visit(overloaded{
                       [&](ConvKernel<T>& k) { glorot_fill(k.weights, 9 * k.c_in, 9 * k.c_out, rng); },
                       [&](SepConvKernel<T>& k) {
                           glorot_fill(k.depthwise, 9 * k.c_in, 9, rng);
                           glorot_fill(k.pointwise, k.c_in, k.c_out, rng);
                       },
                       [&](DenseKernel<T>& k) { glorot_fill(k.weights, k.in, k.out, rng); },
                       [](auto&) {},
                   },
                   layer);
        net.layers_.push_back(std::move(layer));
    }
    return net;
}

template <typename T>
Network<T> Network<T>::from_arrays(const ModelPlan& plan, std::uint64_t seed, std::span<const std::vector<T>> arrays,
                                    std::span<const std::uint64_t> bn_updates) {
    Network net;
    std::size_t bn_index = 0;
    net.plan_ = plan;
    net.seed_ = seed;
    std::size_t next = 0;
    for (const LayerSpec& spec : plan.layers) {
        Layer<T> layer = make_layer<T>(spec);
        for (std::span<T> dst : arrays_of(layer, true)) {
            if (next >= arrays.size()) throw LoadError("too few parameter arrays for the model plan");
            if (arrays[next].size() != dst.size())
                throw LoadError("parameter array " + std::to_string(next) + " has " +
                                std::to_string(arrays[next].size()) + " values, plan expects " +
                                std::to_string(dst.size()));
            std::copy(arrays[next].begin(), arrays[next].end(), dst.begin());
            ++next;
        }
        if (auto* bn = std::get_if<BatchNormState<T>>(&layer)) {
            if (bn_updates.empty())
                bn->updates = BatchNormState<T>::kSaturated;
            else if (bn_index < bn_updates.size())
                bn->updates = bn_updates[bn_index];
            ++bn_index;
        }
        net.layers_.push_back(std::move(layer));
    }
    if (next != arrays.size()) throw LoadError("too many parameter arrays for the model plan");
    if (!bn_updates.empty() && bn_updates.size() != bn_index)
        throw LoadError("batch-norm update counts do not match the model plan");
    return net;
}

template <typename T>
void Network<T>::check_input(const Tensor4<T>& x) const {
    const InputShape& in = plan_.hp.input_shape;
    if (x.empty() || x.h() != in.h || x.w() != in.w || x.c() != in.c)
        throw InvalidInput("network input " + to_string(x.shape()) + " does not match model input (" +
                           std::to_string(in.h) + ", " + std::to_string(in.w) + ", " + std::to_string(in.c) + ")");
}

template <typename T>
ForwardResult<T> Network<T>::forward(const Tensor4<T>& x, Mode mode) const {
    check_input(x);
    const bool train = mode == Mode::train;
    ForwardResult<T> r;
    if (train) r.cache.layers.resize(layers_.size());
    Tensor4<T> a = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        LayerCache<T>* c = train ? &r.cache.layers[i] : nullptr;
        if (c) c->input_shape = a.shape();
        a = std::visit(overloaded{
                           [&](const ConvKernel<T>& k) {
                               auto y = conv2d_forward(a, k);
                               if (c) c->input = std::move(a);
                               return y;
                           },
                           [&](const SepConvKernel<T>& k) {
                               auto y = sepconv2d_forward(a, k);
                               if (c) c->input = std::move(a);
                               return y;
                           },
                           [&](const ReluLayer&) {
                               auto y = relu_forward(a);
                               if (c) c->input = std::move(a);
                               return y;
                           },
                           [&](const MaxPoolLayer&) {
                               auto p = maxpool4x4s2_forward(a);
                               if (c) c->argmax = std::move(p.argmax);
                               return std::move(p.y);
                           },
                           [&](const BatchNormState<T>& s) {
                               auto b = batchnorm_forward(a, s, mode);
                               if (c) {
                                   c->bn = std::move(b.cache);
                                   c->bn_update = std::move(b.state);
                               }
                               return std::move(b.y);
                           },
                           [&](const FlattenLayer&) { return flatten(a); },
                           [&](const GapLayer&) { return global_avg_pool(a); },
                           [&](const DenseKernel<T>& k) {
                               auto y = dense_forward(a, k);
                               if (c) c->input = std::move(a);
                               return y;
                           },
                           [&](const SoftmaxLayer&) { return std::move(a); },
                       },
                       layers_[i]);
    }
    r.logits = std::move(a);
    return r;
}

template <typename T>
Tensor4<T> Network<T>::infer(const Tensor4<T>& x) const {
    return forward(x, Mode::infer).logits;
}

template <typename T>
Tensor4<T> Network<T>::forward_prefix(const Tensor4<T>& x, std::size_t layer_count) const {
    if (layer_count > layers_.size()) throw InvalidInput("forward_prefix: layer count exceeds network depth");
    Network prefix;
    prefix.plan_ = plan_;
    prefix.seed_ = seed_;
    prefix.layers_.assign(layers_.begin(), layers_.begin() + static_cast<std::ptrdiff_t>(layer_count));
    return prefix.forward(x, Mode::infer).logits;
}

template <typename T>
GradientSet<T> Network<T>::backward(const ForwardCache<T>& cache, const Tensor4<T>& grad_logits) const {
    if (cache.layers.size() != layers_.size())
        throw InvalidInput("backward: cache has " + std::to_string(cache.layers.size()) + " layers, network has " +
                           std::to_string(layers_.size()));
    const Shape4 expected{cache.layers.front().input_shape.n, 1, 1, plan_.hp.num_classes};
    if (grad_logits.shape() != expected)
        throw InvalidInput("backward: grad_logits " + to_string(grad_logits.shape()) + " != " + to_string(expected));

    // Gradients are produced back to front; collect per layer, then flatten in registry order.
    std::vector<std::vector<std::vector<T>>> per_layer(layers_.size());
    Tensor4<T> g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const LayerCache<T>& c = cache.layers[i];
        auto& out = per_layer[i];
        g = std::visit(overloaded{
                           [&](const ConvKernel<T>& k) {
                               auto r = conv2d_backward(c.input, k, g);
                               out = {std::move(r.grad_weights), std::move(r.grad_bias)};
                               return std::move(r.grad_x);
                           },
                           [&](const SepConvKernel<T>& k) {
                               auto r = sepconv2d_backward(c.input, k, g);
                               out = {std::move(r.grad_depthwise), std::move(r.grad_pointwise), std::move(r.grad_bias)};
                               return std::move(r.grad_x);
                           },
                           [&](const ReluLayer&) { return relu_backward(c.input, g); },
                           [&](const MaxPoolLayer&) { return maxpool4x4s2_backward(c.argmax, g); },
                           [&](const BatchNormState<T>& s) {
                               auto r = batchnorm_backward(c.bn, s, g);
                               out = {std::move(r.grad_gamma), std::move(r.grad_beta)};
                               return std::move(r.grad_x);
                           },
                           [&](const FlattenLayer&) { return unflatten(g, c.input_shape); },
                           [&](const GapLayer&) { return global_avg_pool_backward(c.input_shape, g); },
                           [&](const DenseKernel<T>& k) {
                               auto r = dense_backward(c.input, k, g);
                               out = {std::move(r.grad_weights), std::move(r.grad_bias)};
                               return std::move(r.grad_x);
                           },
                           [&](const SoftmaxLayer&) { return std::move(g); },
                       },
                       layers_[i]);
    }
    GradientSet<T> grads;
    for (auto& arrays : per_layer)
        for (auto& a : arrays) grads.arrays.push_back(std::move(a));
    return grads;
}

template <typename T>
void Network<T>::commit_batch_stats(const ForwardCache<T>& cache) {
    if (cache.layers.size() != layers_.size()) throw InvalidInput("commit_batch_stats: cache/network mismatch");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto* s = std::get_if<BatchNormState<T>>(&layers_[i]);
        if (!s) continue;
        const auto& update = cache.layers[i].bn_update;
        if (!update || update->channels() != s->channels())
            throw InvalidInput("commit_batch_stats: missing batch-norm statistics for layer " + std::to_string(i));
        s->moving_mean = update->moving_mean;
        s->moving_var = update->moving_var;
        s->updates = update->updates;
    }
}

template <typename T>
ParamRegistry<T> Network<T>::registry() {
    ParamRegistry<T> reg;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto arrays = arrays_of(layers_[i], false);
        for (std::size_t j = 0; j < arrays.size(); ++j)
            reg.push_back({"layer" + std::to_string(i) + "_" + to_string(plan_.layers[i].kind) + "." +
                               array_name(layers_[i], j),
                           i, arrays[j]});
    }
    return reg;
}

template <typename T>
ParamRegistry<const T> Network<T>::registry() const {
    ParamRegistry<const T> out;
    for (auto& e : const_cast<Network*>(this)->registry()) out.push_back({e.name, e.layer, e.values});
    return out;
}

template <typename T>
std::vector<std::size_t> Network<T>::registry_sizes() const {
    std::vector<std::size_t> sizes;
    for (const auto& e : registry()) sizes.push_back(e.values.size());
    return sizes;
}

template <typename T>
std::vector<std::span<const T>> Network<T>::state_arrays() const {
    std::vector<std::span<const T>> out;
    for (auto& layer : const_cast<Network*>(this)->layers_)
        for (std::span<T> a : arrays_of(layer, true)) out.emplace_back(a);
    return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t total = 0;
    for (const auto& a : state_arrays()) total += a.size();
    return total;
}

template <typename T>
std::vector<std::uint64_t> Network<T>::batchnorm_updates() const {
    std::vector<std::uint64_t> out;
    for (const auto& layer : layers_)
        if (const auto* s = std::get_if<BatchNormState<T>>(&layer)) out.push_back(s->updates);
    return out;
}

template <typename T>
std::size_t Network<T>::trainable_count() const {
    std::size_t total = 0;
    for (const auto& e : registry()) total += e.values.size();
    return total;
}

template <typename T>
template <typename U>
Network<U> Network<T>::cast() const {
    std::vector<std::vector<U>> arrays;
    for (const auto& a : state_arrays()) arrays.emplace_back(a.begin(), a.end());
    Network<U> out = Network<U>::from_arrays(plan_, seed_, arrays, batchnorm_updates());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (const auto* s = std::get_if<BatchNormState<T>>(&layers_[i])) {
            auto& d = std::get<BatchNormState<U>>(out.layers()[i]);
            d.epsilon = static_cast<U>(s->epsilon);
            d.momentum = static_cast<U>(s->momentum);
        }
    }
    return out;
}

template class Network<float>;
template class Network<double>;
template Network<double> Network<float>::cast<double>() const;
template Network<float> Network<double>::cast<float>() const;

}  // namespace nlcnn
