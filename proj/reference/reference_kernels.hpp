#pragma once

// Naive serial kernels used as oracles by the tests and as the baseline in
// the kernel benchmark. Direct nested loops; no im2col, no OpenMP.

#include "nlcnn/kernels.hpp"

namespace nlcnn::reference {

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvKernel<T>& k);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvKernel<T>& k, const Tensor4<T>& grad_out);

// Depthwise pass followed by a separate pointwise pass.
template <typename T>
Tensor4<T> sepconv2d_forward(const Tensor4<T>& x, const SepConvKernel<T>& k);

// Scans every 4x4 window over an explicitly padded copy of the input.
template <typename T>
PoolResult<T> maxpool4x4s2_forward(const Tensor4<T>& x);

template <typename T>
Tensor4<T> dense_forward(const Tensor4<T>& x, const DenseKernel<T>& k);

}  // namespace nlcnn::reference
