#pragma once

// OpenMP-parallel compute kernels. Parallelism is over independent batch
// samples (or sample/group pairs); parameter-gradient reductions are
// accumulated per sample and summed in sample order, so results do not
// depend on the thread count.

#include <cstddef>
#include <type_traits>
#include <vector>

#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::nd::kernels {

struct Conv2dGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t k, kh, kw;      // kernel
  std::size_t oh, ow;         // output
  std::size_t stride, pad;
};

/// Validates shapes and derives the output geometry. Throws ShapeError.
template <typename T>
Conv2dGeometry conv2d_geometry(const NdArray<T>& input, const NdArray<T>& kernel, std::size_t stride,
                               std::size_t padding);

/// Cross-correlation of input [N,C,H,W] with kernel [K,C,kh,kw]; bias [K] optional.
template <typename T>
NdArray<T> conv2d(const NdArray<T>& input, const NdArray<T>& kernel, std::type_identity_t<const NdArray<T>*> bias, std::size_t stride,
                  std::size_t padding);

/// Gradients of conv2d. Any of the outputs may be null when not needed;
/// non-null outputs are overwritten.
template <typename T>
void conv2d_backward(const NdArray<T>& input, const NdArray<T>& kernel, const NdArray<T>& grad_out,
                     std::size_t stride, std::size_t padding, NdArray<T>* grad_input, NdArray<T>* grad_kernel,
                     NdArray<T>* grad_bias);

template <typename T>
struct GroupNormCache {
  std::vector<T> mean;  // [N*G]
  std::vector<T> rstd;  // [N*G]
};

template <typename T>
NdArray<T> group_norm(const NdArray<T>& input, std::size_t groups, const NdArray<T>& gain, const NdArray<T>& bias,
                      T eps, GroupNormCache<T>* cache = nullptr);

template <typename T>
void group_norm_backward(const NdArray<T>& input, std::size_t groups, const NdArray<T>& gain,
                         const GroupNormCache<T>& cache, const NdArray<T>& grad_out, NdArray<T>* grad_input,
                         NdArray<T>* grad_gain, NdArray<T>* grad_bias);

template <typename T>
struct AttentionCache {
  NdArray<T> qkv;    // [N, 3C, L]
  NdArray<T> probs;  // [N, heads, L, L]
  NdArray<T> mixed;  // [N, C, L], attention output before the output projection
};

/// Multi-head self-attention over the H*W positions of input [N,C,H,W].
/// qkv_weight [3C,C], qkv_bias [3C], out_weight [C,C], out_bias [C].
/// The residual connection is left to the caller.
template <typename T>
NdArray<T> self_attention(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& qkv_bias,
                          const NdArray<T>& out_weight, const NdArray<T>& out_bias, std::size_t heads,
                          AttentionCache<T>* cache = nullptr);

template <typename T>
void self_attention_backward(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& out_weight,
                             std::size_t heads, const AttentionCache<T>& cache, const NdArray<T>& grad_out,
                             NdArray<T>* grad_input, NdArray<T>* grad_qkv_weight, NdArray<T>* grad_qkv_bias,
                             NdArray<T>* grad_out_weight, NdArray<T>* grad_out_bias);

/// y = x W^T + b for x [N,in], weight [out,in], bias [out].
template <typename T>
NdArray<T> linear(const NdArray<T>& input, const NdArray<T>& weight, std::type_identity_t<const NdArray<T>*> bias);

template <typename T>
void linear_backward(const NdArray<T>& input, const NdArray<T>& weight, const NdArray<T>& grad_out,
                     NdArray<T>* grad_input, NdArray<T>* grad_weight, NdArray<T>* grad_bias);

}  // namespace repaintlab::nd::kernels
