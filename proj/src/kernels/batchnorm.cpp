#include <algorithm>
#include <cmath>
#include <string>

#include "nlcnn/kernels.hpp"

namespace nlcnn {

namespace {

template <typename T>
void check_state(const Tensor4<T>& x, const BatchNormState<T>& s, const char* op) {
    const std::size_t c = s.channels();
    if (s.beta.size() != c || s.moving_mean.size() != c || s.moving_var.size() != c)
        throw InvalidInput(std::string(op) + ": batch-norm arrays differ in length");
    if (x.c() != c)
        throw InvalidInput(std::string(op) + ": input has " + std::to_string(x.c()) + " channels, state has " +
                           std::to_string(c));
}

}  // namespace

template <typename T>
BatchNormResult<T> batchnorm_forward(const Tensor4<T>& x, const BatchNormState<T>& s, Mode mode) {
    check_state(x, s, "batchnorm_forward");
    const std::size_t c = s.channels();
    const std::size_t count = x.n() * x.h() * x.w();
    BatchNormResult<T> r{Tensor4<T>(x.shape()), s, {}};

    if (mode == Mode::infer) {
        // Weight still held by the initial values after `updates` EMA steps.
        const double w = s.updates == 0 ? 0.0 : std::pow(double(s.momentum), double(s.updates));
        std::vector<T> scale(c), shift(c);
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double mean = double(s.moving_mean[ch]) / (1.0 - w);
            const double var = std::max((double(s.moving_var[ch]) - w) / (1.0 - w), 0.0);
            scale[ch] = static_cast<T>(double(s.gamma[ch]) / std::sqrt(var + double(s.epsilon)));
            shift[ch] = static_cast<T>(double(s.beta[ch]) - mean * double(scale[ch]));
        }
        for (std::size_t p = 0; p < count; ++p)
            for (std::size_t ch = 0; ch < c; ++ch) r.y[p * c + ch] = x[p * c + ch] * scale[ch] + shift[ch];
        return r;
    }

    if (count < 2)
        throw InvalidInput("batchnorm_forward: train mode needs at least 2 values per channel, got " +
                           std::to_string(count));

    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) sum[ch] += x[p * c + ch];
    std::vector<T> mean(c), var(c);
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] = static_cast<T>(sum[ch] / double(count));
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double d = double(x[p * c + ch]) - double(mean[ch]);
            sq[ch] += d * d;
        }
    r.cache.inv_std.resize(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        var[ch] = static_cast<T>(sq[ch] / double(count));
        r.cache.inv_std[ch] = T(1) / std::sqrt(var[ch] + s.epsilon);
    }

    r.cache.x_hat = Tensor4<T>(x.shape());
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = p * c + ch;
            const T xh = (x[i] - mean[ch]) * r.cache.inv_std[ch];
            r.cache.x_hat[i] = xh;
            r.y[i] = s.gamma[ch] * xh + s.beta[ch];
        }

    for (std::size_t ch = 0; ch < c; ++ch) {
        r.state.moving_mean[ch] = s.momentum * s.moving_mean[ch] + (T(1) - s.momentum) * mean[ch];
        r.state.moving_var[ch] = s.momentum * s.moving_var[ch] + (T(1) - s.momentum) * var[ch];
    }
    if (s.updates != BatchNormState<T>::kSaturated) ++r.state.updates;
    return r;
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormCache<T>& cache, const BatchNormState<T>& s,
                                     const Tensor4<T>& grad_out) {
    const std::size_t c = s.channels();
    if (grad_out.shape() != cache.x_hat.shape() || cache.inv_std.size() != c || grad_out.c() != c)
        throw InvalidInput("batchnorm_backward: grad_out " + to_string(grad_out.shape()) +
                           " does not match the forward cache " + to_string(cache.x_hat.shape()));
    const std::size_t count = grad_out.n() * grad_out.h() * grad_out.w();

    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = p * c + ch;
            sum_g[ch] += grad_out[i];
            sum_gx[ch] += double(grad_out[i]) * double(cache.x_hat[i]);
        }

    BatchNormGrads<T> g{Tensor4<T>(grad_out.shape()), std::vector<T>(c), std::vector<T>(c)};
    std::vector<T> mean_g(c), mean_gx(c), scale(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        g.grad_beta[ch] = static_cast<T>(sum_g[ch]);
        g.grad_gamma[ch] = static_cast<T>(sum_gx[ch]);
        mean_g[ch] = static_cast<T>(sum_g[ch] / double(count));
        mean_gx[ch] = static_cast<T>(sum_gx[ch] / double(count));
        scale[ch] = s.gamma[ch] * cache.inv_std[ch];
    }
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t i = p * c + ch;
            g.grad_x[i] = scale[ch] * (grad_out[i] - mean_g[ch] - cache.x_hat[i] * mean_gx[ch]);
        }
    return g;
}

template BatchNormResult<float> batchnorm_forward(const Tensor4<float>&, const BatchNormState<float>&, Mode);
template BatchNormResult<double> batchnorm_forward(const Tensor4<double>&, const BatchNormState<double>&, Mode);
template BatchNormGrads<float> batchnorm_backward(const BatchNormCache<float>&, const BatchNormState<float>&,
                                                  const Tensor4<float>&);
template BatchNormGrads<double> batchnorm_backward(const BatchNormCache<double>&, const BatchNormState<double>&,
                                                   const Tensor4<double>&);

}  // namespace nlcnn
