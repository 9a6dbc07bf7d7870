#include "reference_kernels.hpp"

#include <limits>

namespace nlcnn::reference {

namespace {

template <typename T>
T padded_at(const Tensor4<T>& x, std::size_t b, long i, long j, std::size_t c) {
    if (i < 0 || j < 0 || i >= long(x.h()) || j >= long(x.w())) return T(0);
    return x(b, std::size_t(i), std::size_t(j), c);
}

}  // namespace

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvKernel<T>& k) {
    Tensor4<T> y(x.n(), x.h(), x.w(), k.c_out);
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t i = 0; i < x.h(); ++i)
            for (std::size_t j = 0; j < x.w(); ++j)
                for (std::size_t o = 0; o < k.c_out; ++o) {
                    T acc = k.bias[o];
                    for (std::size_t di = 0; di < 3; ++di)
                        for (std::size_t dj = 0; dj < 3; ++dj)
                            for (std::size_t ci = 0; ci < k.c_in; ++ci)
                                acc += padded_at(x, b, long(i + di) - 1, long(j + dj) - 1, ci) * k.at(di, dj, ci, o);
                    y(b, i, j, o) = acc;
                }
    return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out) {
    ConvGrads<T> g{Tensor4<T>(x.shape()), std::vector<T>(k.weights.size(), T(0)), std::vector<T>(k.c_out, T(0))};
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t i = 0; i < x.h(); ++i)
            for (std::size_t j = 0; j < x.w(); ++j)
                for (std::size_t o = 0; o < k.c_out; ++o) {
                    const T go = grad_out(b, i, j, o);
                    g.grad_bias[o] += go;
                    for (std::size_t di = 0; di < 3; ++di)
                        for (std::size_t dj = 0; dj < 3; ++dj) {
                            const long ii = long(i + di) - 1, jj = long(j + dj) - 1;
                            if (ii < 0 || jj < 0 || ii >= long(x.h()) || jj >= long(x.w())) continue;
                            for (std::size_t ci = 0; ci < k.c_in; ++ci) {
                                g.grad_weights[((di * 3 + dj) * k.c_in + ci) * k.c_out + o] +=
                                    x(b, std::size_t(ii), std::size_t(jj), ci) * go;
                                g.grad_x(b, std::size_t(ii), std::size_t(jj), ci) += k.at(di, dj, ci, o) * go;
                            }
                        }
                }
    return g;
}

template <typename T>
Tensor4<T> sepconv2d_forward(const Tensor4<T>& x, const SepConvKernel<T>& k) {
    Tensor4<T> mid(x.shape());
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t i = 0; i < x.h(); ++i)
            for (std::size_t j = 0; j < x.w(); ++j)
                for (std::size_t ci = 0; ci < k.c_in; ++ci) {
                    T acc = T(0);
                    for (std::size_t di = 0; di < 3; ++di)
                        for (std::size_t dj = 0; dj < 3; ++dj)
                            acc += padded_at(x, b, long(i + di) - 1, long(j + dj) - 1, ci) *
                                   k.depthwise[(di * 3 + dj) * k.c_in + ci];
                    mid(b, i, j, ci) = acc;
                }
    Tensor4<T> y(x.n(), x.h(), x.w(), k.c_out);
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t i = 0; i < x.h(); ++i)
            for (std::size_t j = 0; j < x.w(); ++j)
                for (std::size_t o = 0; o < k.c_out; ++o) {
                    T acc = k.bias[o];
                    for (std::size_t ci = 0; ci < k.c_in; ++ci) acc += mid(b, i, j, ci) * k.pointwise[ci * k.c_out + o];
                    y(b, i, j, o) = acc;
                }
    return y;
}

template <typename T>
PoolResult<T> maxpool4x4s2_forward(const Tensor4<T>& x) {
    const std::size_t oh = (x.h() + 1) / 2, ow = (x.w() + 1) / 2;
    const long total_h = std::max<long>(long(oh - 1) * 2 + 4 - long(x.h()), 0);
    const long total_w = std::max<long>(long(ow - 1) * 2 + 4 - long(x.w()), 0);
    const long before_h = total_h / 2, before_w = total_w / 2;
    const std::size_t ph = x.h() + std::size_t(total_h), pw = x.w() + std::size_t(total_w);
    const T neg_inf = -std::numeric_limits<T>::infinity();

    // Explicitly padded copy; padded cells hold -inf and carry no index.
    std::vector<T> padded(x.n() * ph * pw * x.c(), neg_inf);
    std::vector<long> origin(padded.size(), -1);
    auto pidx = [&](std::size_t b, std::size_t i, std::size_t j, std::size_t c) {
        return ((b * ph + i) * pw + j) * x.c() + c;
    };
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t i = 0; i < x.h(); ++i)
            for (std::size_t j = 0; j < x.w(); ++j)
                for (std::size_t c = 0; c < x.c(); ++c) {
                    const std::size_t p = pidx(b, i + std::size_t(before_h), j + std::size_t(before_w), c);
                    padded[p] = x(b, i, j, c);
                    origin[p] = long(x.index(b, i, j, c));
                }

    PoolResult<T> r{Tensor4<T>(x.n(), oh, ow, x.c()), {x.shape(), Shape4{x.n(), oh, ow, x.c()}, {}}};
    r.argmax.index.resize(r.y.size());
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t oi = 0; oi < oh; ++oi)
            for (std::size_t oj = 0; oj < ow; ++oj)
                for (std::size_t c = 0; c < x.c(); ++c) {
                    T best = neg_inf;
                    long arg = -1;
                    for (std::size_t di = 0; di < 4; ++di)
                        for (std::size_t dj = 0; dj < 4; ++dj) {
                            const std::size_t p = pidx(b, oi * 2 + di, oj * 2 + dj, c);
                            if (origin[p] >= 0 && (arg < 0 || padded[p] > best)) {
                                best = padded[p];
                                arg = origin[p];
                            }
                        }
                    r.y(b, oi, oj, c) = best;
                    r.argmax.index[r.y.index(b, oi, oj, c)] = std::size_t(arg);
                }
    return r;
}

template <typename T>
Tensor4<T> dense_forward(const Tensor4<T>& x, const DenseKernel<T>& k) {
    Tensor4<T> y(x.n(), 1, 1, k.out);
    for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t o = 0; o < k.out; ++o) {
            T acc = k.bias[o];
            for (std::size_t f = 0; f < k.in; ++f) acc += x[b * k.in + f] * k.weights[f * k.out + o];
            y(b, 0, 0, o) = acc;
        }
    return y;
}

#define NLCNN_REFERENCE_INSTANTIATE(T)                                                                 \
    template Tensor4<T> conv2d_forward(const Tensor4<T>&, const ConvKernel<T>&);                       \
    template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const ConvKernel<T>&, const Tensor4<T>&); \
    template Tensor4<T> sepconv2d_forward(const Tensor4<T>&, const SepConvKernel<T>&);                 \
    template PoolResult<T> maxpool4x4s2_forward(const Tensor4<T>&);                                    \
    template Tensor4<T> dense_forward(const Tensor4<T>&, const DenseKernel<T>&);

NLCNN_REFERENCE_INSTANTIATE(float)
NLCNN_REFERENCE_INSTANTIATE(double)

}  // namespace nlcnn::reference
