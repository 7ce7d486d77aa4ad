#pragma once

#include "edgereg/autodiff.hpp"
#include "edgereg/rng.hpp"

namespace edgereg {

// 3D convolution, stride 1, zero "same" padding, odd kernel, optional dilation.
// x: (Cin, Z, Y, X); w: (Cout, Cin, K, K, K); b: (Cout). Output (Cout, Z, Y, X).
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int dilation = 1);

// 2x2x2 average pooling with stride 2; dims must be even.
template <class T>
Var<T> avg_pool2(const Var<T>& x);

// 3x3x3 max pooling with stride 1 and same padding (out-of-range voxels ignored).
template <class T>
Var<T> max_pool3_same(const Var<T>& x);

// Trilinear 2x upsampling. Output coordinate o samples input at o/2 - 0.25
// (edge-clamped), i.e. the half-voxel-centred convention.
template <class T>
Var<T> upsample2_trilinear(const Var<T>& x);

// Per-channel batch normalisation over the spatial axes (batch size 1).
// In training mode batch statistics are used and running stats updated
// (biased variance normalises, unbiased feeds the running estimate);
// otherwise the running statistics are applied.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool train, T momentum = T(0.1), T eps = T(1e-5));

// Inverted elementwise dropout; identity when inactive or p == 0.
template <class T>
Var<T> dropout(const Var<T>& x, T p, bool active, RNG& rng);

} // namespace edgereg
