#include <atomic>
#include <cmath>
#include <string>

#include "detail.hpp"
#include "nlcnn/kernels.hpp"

namespace nlcnn {

namespace {
std::atomic<bool> g_deterministic{false};
}

void set_deterministic(bool on) noexcept { g_deterministic.store(on, std::memory_order_relaxed); }
bool deterministic() noexcept { return g_deterministic.load(std::memory_order_relaxed); }

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
    Tensor4<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
    if (x.shape() != grad_out.shape())
        throw InvalidInput("relu_backward: shape " + to_string(grad_out.shape()) + " != " + to_string(x.shape()));
    Tensor4<T> g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
    return g;
}

template <typename T>
Tensor4<T> global_avg_pool(const Tensor4<T>& x) {
    const std::size_t c = x.c(), hw = x.h() * x.w();
    Tensor4<T> y(x.n(), 1, 1, c);
    std::vector<T> acc(c);
    for (std::size_t b = 0; b < x.n(); ++b) {
        std::fill(acc.begin(), acc.end(), T(0));
        const T* s = x.sample(b).data();
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) acc[ch] += s[p * c + ch];
        for (std::size_t ch = 0; ch < c; ++ch) y(b, 0, 0, ch) = acc[ch] / static_cast<T>(hw);
    }
    return y;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Shape4& input_shape, const Tensor4<T>& grad_out) {
    if (grad_out.shape() != Shape4{input_shape.n, 1, 1, input_shape.c})
        throw InvalidInput("global_avg_pool_backward: grad_out " + to_string(grad_out.shape()) +
                           " does not match input " + to_string(input_shape));
    Tensor4<T> gx(input_shape);
    const std::size_t c = input_shape.c, hw = input_shape.pixels();
    const T inv = T(1) / static_cast<T>(hw);
    for (std::size_t b = 0; b < input_shape.n; ++b) {
        T* s = gx.sample(b).data();
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) s[p * c + ch] = grad_out(b, 0, 0, ch) * inv;
    }
    return gx;
}

template <typename T>
Tensor4<T> flatten(const Tensor4<T>& x) {
    return x.reshaped(Shape4{x.n(), 1, 1, x.h() * x.w() * x.c()});
}

template <typename T>
Tensor4<T> unflatten(const Tensor4<T>& grad_out, const Shape4& input_shape) {
    if (grad_out.shape() != Shape4{input_shape.n, 1, 1, input_shape.sample_size()})
        throw InvalidInput("unflatten: " + to_string(grad_out.shape()) + " cannot be restored to " +
                           to_string(input_shape));
    return grad_out.reshaped(input_shape);
}

template <typename T>
Tensor4<T> dense_forward(const Tensor4<T>& x, const DenseKernel<T>& k) {
    if (x.h() != 1 || x.w() != 1 || x.c() != k.in)
        throw InvalidInput("dense_forward: expected (n, 1, 1, " + std::to_string(k.in) + "), got " +
                           to_string(x.shape()));
    Tensor4<T> y(x.n(), 1, 1, k.out);
    for (std::size_t b = 0; b < x.n(); ++b) std::copy(k.bias.begin(), k.bias.end(), y.sample(b).data());
    detail::gemm_nn_acc(x.n(), k.out, k.in, x.data(), k.in, k.weights.data(), k.out, y.data(), k.out);
    return y;
}

template <typename T>
DenseGrads<T> dense_backward(const Tensor4<T>& x, const DenseKernel<T>& k, const Tensor4<T>& grad_out) {
    if (x.h() != 1 || x.w() != 1 || x.c() != k.in)
        throw InvalidInput("dense_backward: expected (n, 1, 1, " + std::to_string(k.in) + "), got " +
                           to_string(x.shape()));
    if (grad_out.shape() != Shape4{x.n(), 1, 1, k.out})
        throw InvalidInput("dense_backward: grad_out shape " + to_string(grad_out.shape()) + " is wrong");
    DenseGrads<T> g{Tensor4<T>(x.shape()), std::vector<T>(k.weights.size(), T(0)), std::vector<T>(k.out, T(0))};
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t o = 0; o < k.out; ++o) g.grad_bias[o] += grad_out(b, 0, 0, o);
    detail::gemm_tn_acc(k.in, k.out, x.n(), x.data(), k.in, grad_out.data(), k.out, g.grad_weights.data(), k.out);
    const std::vector<T> w_t = detail::transpose(k.weights.data(), k.in, k.out);
    detail::gemm_nn_acc(x.n(), k.in, k.out, grad_out.data(), k.out, w_t.data(), k.in, g.grad_x.data(), k.in);
    return g;
}

namespace {

template <typename T>
void check_logits(const Tensor4<T>& logits, const char* op) {
    if (logits.h() != 1 || logits.w() != 1)
        throw InvalidInput(std::string(op) + ": logits must be (n, 1, 1, classes), got " + to_string(logits.shape()));
}

}  // namespace

template <typename T>
Tensor4<T> softmax(const Tensor4<T>& logits) {
    check_logits(logits, "softmax");
    const std::size_t classes = logits.c();
    Tensor4<T> p(logits.shape());
    for (std::size_t b = 0; b < logits.n(); ++b) {
        const T* z = logits.sample(b).data();
        T* out = p.sample(b).data();
        const T mx = *std::max_element(z, z + classes);
        T sum = T(0);
        for (std::size_t o = 0; o < classes; ++o) {
            out[o] = std::exp(z[o] - mx);
            sum += out[o];
        }
        for (std::size_t o = 0; o < classes; ++o) out[o] /= sum;
    }
    return p;
}

template <typename T>
XentResult<T> softmax_xent(const Tensor4<T>& logits, const Tensor4<T>& one_hot) {
    check_logits(logits, "softmax_xent");
    if (one_hot.shape() != logits.shape())
        throw InvalidInput("softmax_xent: labels shape " + to_string(one_hot.shape()) + " != logits shape " +
                           to_string(logits.shape()));
    const std::size_t n = logits.n(), classes = logits.c();
    for (std::size_t b = 0; b < n; ++b) {
        std::size_t ones = 0;
        for (std::size_t o = 0; o < classes; ++o) {
            const T v = one_hot(b, 0, 0, o);
            if (v == T(1))
                ++ones;
            else if (v != T(0))
                throw InvalidInput("softmax_xent: label row " + std::to_string(b) + " is not one-hot");
        }
        if (ones != 1) throw InvalidInput("softmax_xent: label row " + std::to_string(b) + " is not one-hot");
    }

    XentResult<T> r{0.0, softmax(logits), Tensor4<T>(logits.shape())};
    double total = 0.0;
    const T inv_n = T(1) / static_cast<T>(n);
    for (std::size_t b = 0; b < n; ++b) {
        const T* z = logits.sample(b).data();
        const T mx = *std::max_element(z, z + classes);
        double sum = 0.0;
        for (std::size_t o = 0; o < classes; ++o) sum += std::exp(double(z[o]) - double(mx));
        const double log_norm = double(mx) + std::log(sum);
        for (std::size_t o = 0; o < classes; ++o) {
            const T y = one_hot(b, 0, 0, o);
            if (y != T(0)) total -= double(y) * (double(z[o]) - log_norm);
            r.grad_logits(b, 0, 0, o) = (r.probs(b, 0, 0, o) - y) * inv_n;
        }
    }
    r.loss = total / double(n);
    return r;
}

#define NLCNN_INSTANTIATE_ELEMENTWISE(T)                                                             \
    template Tensor4<T> relu_forward(const Tensor4<T>&);                                             \
    template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                         \
    template Tensor4<T> global_avg_pool(const Tensor4<T>&);                                          \
    template Tensor4<T> global_avg_pool_backward(const Shape4&, const Tensor4<T>&);                  \
    template Tensor4<T> flatten(const Tensor4<T>&);                                                  \
    template Tensor4<T> unflatten(const Tensor4<T>&, const Shape4&);                                 \
    template Tensor4<T> dense_forward(const Tensor4<T>&, const DenseKernel<T>&);                     \
    template DenseGrads<T> dense_backward(const Tensor4<T>&, const DenseKernel<T>&, const Tensor4<T>&); \
    template Tensor4<T> softmax(const Tensor4<T>&);                                                  \
    template XentResult<T> softmax_xent(const Tensor4<T>&, const Tensor4<T>&);

NLCNN_INSTANTIATE_ELEMENTWISE(float)
NLCNN_INSTANTIATE_ELEMENTWISE(double)

}  // namespace nlcnn
