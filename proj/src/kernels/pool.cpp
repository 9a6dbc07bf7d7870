#include <limits>

#include "nlcnn/kernels.hpp"

namespace nlcnn {

namespace {
constexpr std::size_t kWindow = 4;
constexpr std::size_t kStride = 2;
}  // namespace

std::size_t pooled_extent(std::size_t in) noexcept { return (in + kStride - 1) / kStride; }

std::size_t pool_pad_before(std::size_t in) noexcept {
    const std::size_t out = pooled_extent(in);
    const std::size_t span = (out - 1) * kStride + kWindow;
    return span > in ? (span - in) / 2 : 0;
}

template <typename T>
PoolResult<T> maxpool4x4s2_forward(const Tensor4<T>& x) {
    if (x.empty()) throw InvalidInput("maxpool4x4s2_forward: empty input tensor");
    const Shape4 in = x.shape();
    const Shape4 out{in.n, pooled_extent(in.h), pooled_extent(in.w), in.c};
    const std::ptrdiff_t pad_h = static_cast<std::ptrdiff_t>(pool_pad_before(in.h));
    const std::ptrdiff_t pad_w = static_cast<std::ptrdiff_t>(pool_pad_before(in.w));

    PoolResult<T> r{Tensor4<T>(out), PoolArgmax{in, out, std::vector<std::size_t>(out.size())}};

#pragma omp parallel for schedule(static) if (!deterministic())
    for (std::size_t b = 0; b < in.n; ++b) {
        for (std::size_t oi = 0; oi < out.h; ++oi) {
            const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(oi * kStride) - pad_h;
            const std::size_t i0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(top, 0));
            const std::size_t i1 = std::min<std::size_t>(static_cast<std::size_t>(top + kWindow), in.h);
            for (std::size_t oj = 0; oj < out.w; ++oj) {
                const std::ptrdiff_t left = static_cast<std::ptrdiff_t>(oj * kStride) - pad_w;
                const std::size_t j0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(left, 0));
                const std::size_t j1 = std::min<std::size_t>(static_cast<std::size_t>(left + kWindow), in.w);
                for (std::size_t ch = 0; ch < in.c; ++ch) {
                    std::size_t best = x.index(b, i0, j0, ch);
                    T best_v = x[best];
                    for (std::size_t i = i0; i < i1; ++i) {
                        for (std::size_t j = j0; j < j1; ++j) {
                            const std::size_t idx = x.index(b, i, j, ch);
                            if (x[idx] > best_v) {
                                best_v = x[idx];
                                best = idx;
                            }
                        }
                    }
                    const std::size_t o = r.y.index(b, oi, oj, ch);
                    r.y[o] = best_v;
                    r.argmax.index[o] = best;
                }
            }
        }
    }
    return r;
}

template <typename T>
Tensor4<T> maxpool4x4s2_backward(const PoolArgmax& argmax, const Tensor4<T>& grad_out) {
    if (grad_out.shape() != argmax.output_shape || argmax.index.size() != grad_out.size())
        throw InvalidInput("maxpool4x4s2_backward: argmax map is for output " + to_string(argmax.output_shape) +
                           ", got grad_out " + to_string(grad_out.shape()));
    Tensor4<T> gx(argmax.input_shape);
    const std::size_t per_sample = argmax.output_shape.sample_size();
    // Windows overlap only within a sample, so samples can be scattered independently.
#pragma omp parallel for schedule(static) if (!deterministic())
    for (std::size_t b = 0; b < argmax.output_shape.n; ++b)
        for (std::size_t o = b * per_sample; o < (b + 1) * per_sample; ++o) gx[argmax.index[o]] += grad_out[o];
    return gx;
}

template PoolResult<float> maxpool4x4s2_forward(const Tensor4<float>&);
template PoolResult<double> maxpool4x4s2_forward(const Tensor4<double>&);
template Tensor4<float> maxpool4x4s2_backward(const PoolArgmax&, const Tensor4<float>&);
template Tensor4<double> maxpool4x4s2_backward(const PoolArgmax&, const Tensor4<double>&);

}  // namespace nlcnn
