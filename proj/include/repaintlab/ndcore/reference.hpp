#pragma once

// Serial naive-loop versions of the compute kernels. They share no code with
// kernels.cpp and serve as the oracle in tests and the baseline in benchmarks.

#include <cstddef>
#include <type_traits>

#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::nd::reference {

template <typename T>
NdArray<T> conv2d(const NdArray<T>& input, const NdArray<T>& kernel, std::type_identity_t<const NdArray<T>*> bias, std::size_t stride,
                  std::size_t padding);

template <typename T>
NdArray<T> group_norm(const NdArray<T>& input, std::size_t groups, const NdArray<T>& gain, const NdArray<T>& bias,
                      T eps);

template <typename T>
NdArray<T> self_attention(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& qkv_bias,
                          const NdArray<T>& out_weight, const NdArray<T>& out_bias, std::size_t heads);

template <typename T>
NdArray<T> linear(const NdArray<T>& input, const NdArray<T>& weight, std::type_identity_t<const NdArray<T>*> bias);

}  // namespace repaintlab::nd::reference
