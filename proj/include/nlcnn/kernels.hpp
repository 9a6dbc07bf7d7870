#pragma once

// Forward and backward layer kernels for NL-CNN.
//
// All kernels are pure functions of their arguments. Work is split over the
// batch dimension with OpenMP; reductions over the batch (weight and bias
// gradients) are accumulated in a fixed number of chunks that are summed in
// order, so results do not depend on the thread count. When deterministic
// mode is on, the kernels run single-threaded.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nlcnn/tensor.hpp"

namespace nlcnn {

void set_deterministic(bool on) noexcept;
bool deterministic() noexcept;

enum class Mode { train, infer };

// 3x3 convolution weights laid out (3, 3, c_in, c_out).
template <typename T>
struct ConvKernel {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::vector<T> weights;
    std::vector<T> bias;

    static ConvKernel zeros(std::size_t c_in, std::size_t c_out) {
        return {c_in, c_out, std::vector<T>(9 * c_in * c_out, T(0)), std::vector<T>(c_out, T(0))};
    }
    T& at(std::size_t di, std::size_t dj, std::size_t ci, std::size_t o) {
        return weights[((di * 3 + dj) * c_in + ci) * c_out + o];
    }
    const T& at(std::size_t di, std::size_t dj, std::size_t ci, std::size_t o) const {
        return weights[((di * 3 + dj) * c_in + ci) * c_out + o];
    }
    std::size_t param_count() const { return weights.size() + bias.size(); }
};

template <typename T>
struct ConvGrads {
    Tensor4<T> grad_x;
    std::vector<T> grad_weights;
    std::vector<T> grad_bias;
};

// Depthwise 3x3 (3, 3, c_in) followed by pointwise (c_in, c_out) plus bias.
template <typename T>
struct SepConvKernel {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::vector<T> depthwise;
    std::vector<T> pointwise;
    std::vector<T> bias;

    static SepConvKernel zeros(std::size_t c_in, std::size_t c_out) {
        return {c_in, c_out, std::vector<T>(9 * c_in, T(0)), std::vector<T>(c_in * c_out, T(0)),
                std::vector<T>(c_out, T(0))};
    }
    std::size_t param_count() const { return depthwise.size() + pointwise.size() + bias.size(); }
};

template <typename T>
struct SepConvGrads {
    Tensor4<T> grad_x;
    std::vector<T> grad_depthwise;
    std::vector<T> grad_pointwise;
    std::vector<T> grad_bias;
};

// Flat input index of the winning element for every pooled cell.
struct PoolArgmax {
    Shape4 input_shape;
    Shape4 output_shape;
    std::vector<std::size_t> index;
};

template <typename T>
struct PoolResult {
    Tensor4<T> y;
    PoolArgmax argmax;
};

template <typename T>
struct BatchNormState {
    std::vector<T> gamma;
    std::vector<T> beta;
    std::vector<T> moving_mean;
    std::vector<T> moving_var;
    T epsilon = T(1e-3);
    T momentum = T(0.99);
    // Train-mode updates folded into the moving statistics. Infer mode uses
    // it to remove the start-up bias of the moving averages towards their
    // initial values (0 and 1), which matters for short runs.
    std::uint64_t updates = 0;

    static constexpr std::uint64_t kSaturated = ~std::uint64_t{0};

    static BatchNormState identity(std::size_t channels) {
        return {std::vector<T>(channels, T(1)), std::vector<T>(channels, T(0)), std::vector<T>(channels, T(0)),
                std::vector<T>(channels, T(1))};
    }
    std::size_t channels() const { return gamma.size(); }
    std::size_t param_count() const { return 4 * gamma.size(); }
};

template <typename T>
struct BatchNormCache {
    Tensor4<T> x_hat;
    std::vector<T> inv_std;
};

template <typename T>
struct BatchNormResult {
    Tensor4<T> y;
    // Train mode: state with refreshed moving statistics. Infer mode: a copy of the input state.
    BatchNormState<T> state;
    BatchNormCache<T> cache;
};

template <typename T>
struct BatchNormGrads {
    Tensor4<T> grad_x;
    std::vector<T> grad_gamma;
    std::vector<T> grad_beta;
};

// Weights laid out (features, classes).
template <typename T>
struct DenseKernel {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<T> weights;
    std::vector<T> bias;

    static DenseKernel zeros(std::size_t in, std::size_t out) {
        return {in, out, std::vector<T>(in * out, T(0)), std::vector<T>(out, T(0))};
    }
    std::size_t param_count() const { return weights.size() + bias.size(); }
};

template <typename T>
struct DenseGrads {
    Tensor4<T> grad_x;
    std::vector<T> grad_weights;
    std::vector<T> grad_bias;
};

template <typename T>
struct XentResult {
    double loss = 0.0;
    Tensor4<T> probs;
    Tensor4<T> grad_logits;
};

std::size_t pooled_extent(std::size_t in) noexcept;
// Rows/cols of implicit padding added before the first pooling window.
std::size_t pool_pad_before(std::size_t in) noexcept;

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvKernel<T>& k);
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> sepconv2d_forward(const Tensor4<T>& x, const SepConvKernel<T>& k);
template <typename T>
SepConvGrads<T> sepconv2d_backward(const Tensor4<T>& x, const SepConvKernel<T>& k, const Tensor4<T>& grad_out);

template <typename T>
PoolResult<T> maxpool4x4s2_forward(const Tensor4<T>& x);
template <typename T>
Tensor4<T> maxpool4x4s2_backward(const PoolArgmax& argmax, const Tensor4<T>& grad_out);

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor4<T>& x, const BatchNormState<T>& s, Mode mode);
// Backward of the train-mode transform.
template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormState<T>& s,
                                     const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x);
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x);
template <typename T>
Tensor4<T> global_avg_pool_backward(const Shape4& input_shape, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> flatten(const Tensor4<T>& x);
template <typename T>
Tensor4<T> unflatten(const Tensor4<T>& grad_out, const Shape4& input_shape);

template <typename T>
Tensor4<T> dense_forward(const Tensor4<T>& x, const DenseKernel<T>& k);
template <typename T>
DenseGrads<T> dense_backward(const Tensor4<T>& x, const DenseKernel<T>& k, const Tensor4<T>& grad_out);

// logits and one_hot are (n, 1, 1, classes).
template <typename T>
XentResult<T> softmax_xent(const Tensor4<T>& logits, const Tensor4<T>& one_hot);
template <typename T>
Tensor4<T> softmax(const Tensor4<T>& logits);

}  // namespace nlcnn
