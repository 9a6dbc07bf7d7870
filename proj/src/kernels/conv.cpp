#include <string>

#include "detail.hpp"
#include "nlcnn/kernels.hpp"

namespace nlcnn {

namespace {

template <typename T>
void check_conv(const Tensor4<T>& x, std::size_t c_in, const char* op) {
    if (x.empty()) throw InvalidInput(std::string(op) + ": empty input tensor");
    if (x.c() != c_in)
        throw InvalidInput(std::string(op) + ": input has " + std::to_string(x.c()) + " channels, kernel expects " +
                           std::to_string(c_in));
}

template <typename T>
void check_grad_shape(const Tensor4<T>& grad_out, const Shape4& expected, const char* op) {
    if (grad_out.shape() != expected)
        throw InvalidInput(std::string(op) + ": grad_out shape " + to_string(grad_out.shape()) + " != expected " +
                           to_string(expected));
}

template <typename T>
void add_into(std::vector<T>& dst, const std::vector<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvKernel<T>& k) {
    check_conv(x, k.c_in, "conv2d_forward");
    if (k.weights.size() != 9 * k.c_in * k.c_out || k.bias.size() != k.c_out)
        throw InvalidInput("conv2d_forward: malformed kernel");
    const std::size_t n = x.n(), h = x.h(), w = x.w(), hw = h * w, kdim = 9 * k.c_in;
    Tensor4<T> y(n, h, w, k.c_out);

#pragma omp parallel if (!deterministic())
    {
        std::vector<T> cols(hw * kdim);
#pragma omp for schedule(static)
        for (std::size_t b = 0; b < n; ++b) {
            T* out = y.sample(b).data();
            for (std::size_t p = 0; p < hw; ++p) std::copy(k.bias.begin(), k.bias.end(), out + p * k.c_out);
            detail::im2col3x3(x.sample(b).data(), h, w, k.c_in, cols.data());
            detail::gemm_nn_acc(hw, k.c_out, kdim, cols.data(), kdim, k.weights.data(), k.c_out, out, k.c_out);
        }
    }
    return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out) {
    check_conv(x, k.c_in, "conv2d_backward");
    check_grad_shape(grad_out, Shape4{x.n(), x.h(), x.w(), k.c_out}, "conv2d_backward");
    const std::size_t n = x.n(), h = x.h(), w = x.w(), hw = h * w, kdim = 9 * k.c_in;
    const std::size_t chunks = detail::chunk_count(n);

    ConvGrads<T> g{Tensor4<T>(x.shape()), std::vector<T>(k.weights.size(), T(0)), std::vector<T>(k.c_out, T(0))};
    const std::vector<T> w_t = detail::transpose(k.weights.data(), kdim, k.c_out);
    std::vector<std::vector<T>> part_w(chunks, std::vector<T>(k.weights.size(), T(0)));
    std::vector<std::vector<T>> part_b(chunks, std::vector<T>(k.c_out, T(0)));

#pragma omp parallel if (!deterministic())
    {
        std::vector<T> cols(hw * kdim);
        std::vector<T> grad_cols(hw * kdim);
#pragma omp for schedule(static)
        for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
            const std::size_t lo = detail::chunk_begin(chunk, chunks, n);
            const std::size_t hi = detail::chunk_begin(chunk + 1, chunks, n);
            for (std::size_t b = lo; b < hi; ++b) {
                const T* go = grad_out.sample(b).data();
                for (std::size_t p = 0; p < hw; ++p)
                    for (std::size_t o = 0; o < k.c_out; ++o) part_b[chunk][o] += go[p * k.c_out + o];

                detail::im2col3x3(x.sample(b).data(), h, w, k.c_in, cols.data());
                detail::gemm_tn_acc(kdim, k.c_out, hw, cols.data(), kdim, go, k.c_out, part_w[chunk].data(),
                                    k.c_out);

                std::fill(grad_cols.begin(), grad_cols.end(), T(0));
                detail::gemm_nn_acc(hw, kdim, k.c_out, go, k.c_out, w_t.data(), kdim, grad_cols.data(), kdim);
                detail::col2im3x3_add(grad_cols.data(), h, w, k.c_in, g.grad_x.sample(b).data());
            }
        }
    }
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        add_into(g.grad_weights, part_w[chunk]);
        add_into(g.grad_bias, part_b[chunk]);
    }
    return g;
}

namespace {

// out[p, c] = sum_{di,dj} x_pad[p + (di,dj), c] * depthwise[di, dj, c]
template <typename T>
void depthwise3x3(const T* x, std::size_t h, std::size_t w, std::size_t c, const T* dw, T* out) {
    std::fill(out, out + h * w * c, T(0));
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            T* dst = out + (i * w + j) * c;
            for (std::size_t di = 0; di < 3; ++di) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < 3; ++dj) {
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const T* src = x + (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * c;
                    const T* wk = dw + (di * 3 + dj) * c;
#pragma omp simd
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch] * wk[ch];
                }
            }
        }
    }
}

template <typename T>
void depthwise3x3_backward(const T* x, const T* grad_mid, std::size_t h, std::size_t w, std::size_t c, const T* dw,
                           T* grad_x, T* grad_dw) {
    for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
            const T* g = grad_mid + (i * w + j) * c;
            for (std::size_t di = 0; di < 3; ++di) {
                const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(i + di) - 1;
                if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t dj = 0; dj < 3; ++dj) {
                    const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(j + dj) - 1;
                    if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                    const std::size_t off = (static_cast<std::size_t>(ii) * w + static_cast<std::size_t>(jj)) * c;
                    const T* wk = dw + (di * 3 + dj) * c;
                    T* gwk = grad_dw + (di * 3 + dj) * c;
#pragma omp simd
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        gwk[ch] += x[off + ch] * g[ch];
                        grad_x[off + ch] += wk[ch] * g[ch];
                    }
                }
            }
        }
    }
}

template <typename T>
void check_sep(const SepConvKernel<T>& k, const char* op) {
    if (k.depthwise.size() != 9 * k.c_in || k.pointwise.size() != k.c_in * k.c_out || k.bias.size() != k.c_out)
        throw InvalidInput(std::string(op) + ": malformed separable kernel");
}

}  // namespace

template <typename T>
Tensor4<T> sepconv2d_forward(const Tensor4<T>& x, const SepConvKernel<T>& k) {
    check_conv(x, k.c_in, "sepconv2d_forward");
    check_sep(k, "sepconv2d_forward");
    const std::size_t n = x.n(), h = x.h(), w = x.w(), hw = h * w;
    Tensor4<T> y(n, h, w, k.c_out);

#pragma omp parallel if (!deterministic())
    {
        std::vector<T> mid(hw * k.c_in);
#pragma omp for schedule(static)
        for (std::size_t b = 0; b < n; ++b) {
            depthwise3x3(x.sample(b).data(), h, w, k.c_in, k.depthwise.data(), mid.data());
            T* out = y.sample(b).data();
            for (std::size_t p = 0; p < hw; ++p) std::copy(k.bias.begin(), k.bias.end(), out + p * k.c_out);
            detail::gemm_nn_acc(hw, k.c_out, k.c_in, mid.data(), k.c_in, k.pointwise.data(), k.c_out, out, k.c_out);
        }
    }
    return y;
}

template <typename T>
SepConvGrads<T> sepconv2d_backward(const Tensor4<T>& x, const SepConvKernel<T>& k, const Tensor4<T>& grad_out) {
    check_conv(x, k.c_in, "sepconv2d_backward");
    check_sep(k, "sepconv2d_backward");
    check_grad_shape(grad_out, Shape4{x.n(), x.h(), x.w(), k.c_out}, "sepconv2d_backward");
    const std::size_t n = x.n(), h = x.h(), w = x.w(), hw = h * w;
    const std::size_t chunks = detail::chunk_count(n);

    SepConvGrads<T> g{Tensor4<T>(x.shape()), std::vector<T>(k.depthwise.size(), T(0)),
                      std::vector<T>(k.pointwise.size(), T(0)), std::vector<T>(k.c_out, T(0))};
    const std::vector<T> pw_t = detail::transpose(k.pointwise.data(), k.c_in, k.c_out);
    std::vector<std::vector<T>> part_dw(chunks, std::vector<T>(k.depthwise.size(), T(0)));
    std::vector<std::vector<T>> part_pw(chunks, std::vector<T>(k.pointwise.size(), T(0)));
    std::vector<std::vector<T>> part_b(chunks, std::vector<T>(k.c_out, T(0)));

#pragma omp parallel if (!deterministic())
    {
        std::vector<T> mid(hw * k.c_in);
        std::vector<T> grad_mid(hw * k.c_in);
#pragma omp for schedule(static)
        for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
            const std::size_t lo = detail::chunk_begin(chunk, chunks, n);
            const std::size_t hi = detail::chunk_begin(chunk + 1, chunks, n);
            for (std::size_t b = lo; b < hi; ++b) {
                const T* xs = x.sample(b).data();
                const T* go = grad_out.sample(b).data();
                for (std::size_t p = 0; p < hw; ++p)
                    for (std::size_t o = 0; o < k.c_out; ++o) part_b[chunk][o] += go[p * k.c_out + o];

                depthwise3x3(xs, h, w, k.c_in, k.depthwise.data(), mid.data());
                detail::gemm_tn_acc(k.c_in, k.c_out, hw, mid.data(), k.c_in, go, k.c_out, part_pw[chunk].data(),
                                    k.c_out);

                std::fill(grad_mid.begin(), grad_mid.end(), T(0));
                detail::gemm_nn_acc(hw, k.c_in, k.c_out, go, k.c_out, pw_t.data(), k.c_in, grad_mid.data(), k.c_in);
                depthwise3x3_backward(xs, grad_mid.data(), h, w, k.c_in, k.depthwise.data(),
                                      g.grad_x.sample(b).data(), part_dw[chunk].data());
            }
        }
    }
    for (std::size_t chunk = 0; chunk < chunks; ++chunk) {
        add_into(g.grad_depthwise, part_dw[chunk]);
        add_into(g.grad_pointwise, part_pw[chunk]);
        add_into(g.grad_bias, part_b[chunk]);
    }
    return g;
}

#define NLCNN_INSTANTIATE_CONV(T)                                                                            \
    template Tensor4<T> conv2d_forward(const Tensor4<T>&, const ConvKernel<T>&);                             \
    template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const ConvKernel<T>&, const Tensor4<T>&);       \
    template Tensor4<T> sepconv2d_forward(const Tensor4<T>&, const SepConvKernel<T>&);                       \
    template SepConvGrads<T> sepconv2d_backward(const Tensor4<T>&, const SepConvKernel<T>&, const Tensor4<T>&);

NLCNN_INSTANTIATE_CONV(float)
NLCNN_INSTANTIATE_CONV(double)

}  // namespace nlcnn
