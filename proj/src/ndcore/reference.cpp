#include "repaintlab/ndcore/reference.hpp"

#include <cmath>
#include <vector>

namespace repaintlab::nd::reference {

template <typename T>
NdArray<T> conv2d(const NdArray<T>& input, const NdArray<T>& kernel, std::type_identity_t<const NdArray<T>*> bias, std::size_t stride,
                  std::size_t padding) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t k = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::size_t oh = (h + 2 * padding - kh) / stride + 1;
  const std::size_t ow = (w + 2 * padding - kw) / stride + 1;
  NdArray<T> out({n, k, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < k; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = bias ? (*bias)[o] : T(0);
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < kh; ++dy)
              for (std::size_t dx = 0; dx < kw; ++dx) {
                const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(padding);
                const long ix = static_cast<long>(x * stride + dx) - static_cast<long>(padding);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += input.at(s, ch, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       kernel.at(o, ch, dy, dx);
              }
          out.at(s, o, y, x) = acc;
        }
  return out;
}

template <typename T>
NdArray<T> group_norm(const NdArray<T>& input, std::size_t groups, const NdArray<T>& gain, const NdArray<T>& bias,
                      T eps) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cpg = c / groups;
  NdArray<T> out(input.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t g = 0; g < groups; ++g) {
      double mean = 0;
      double count = 0;
      for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            mean += input.at(s, ch, y, x);
            count += 1;
          }
      mean /= count;
      double var = 0;
      for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double d = input.at(s, ch, y, x) - mean;
            var += d * d;
          }
      var /= count;
      for (std::size_t ch = g * cpg; ch < (g + 1) * cpg; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double xhat = (input.at(s, ch, y, x) - mean) / std::sqrt(var + eps);
            out.at(s, ch, y, x) = static_cast<T>(xhat * gain[ch] + bias[ch]);
          }
    }
  return out;
}

template <typename T>
NdArray<T> self_attention(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& qkv_bias,
                          const NdArray<T>& out_weight, const NdArray<T>& out_bias, std::size_t heads) {
  const std::size_t n = input.dim(0), c = input.dim(1), len = input.dim(2) * input.dim(3);
  const std::size_t d = c / heads;
  NdArray<T> out(input.shape());
  std::vector<double> q(c * len), k(c * len), v(c * len), mixed(c * len), weights(len);
  for (std::size_t s = 0; s < n; ++s) {
    const T* x = input.data() + s * c * len;
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t p = 0; p < len; ++p) {
        double aq = qkv_bias[o], ak = qkv_bias[c + o], av = qkv_bias[2 * c + o];
        for (std::size_t i = 0; i < c; ++i) {
          aq += qkv_weight[o * c + i] * x[i * len + p];
          ak += qkv_weight[(c + o) * c + i] * x[i * len + p];
          av += qkv_weight[(2 * c + o) * c + i] * x[i * len + p];
        }
        q[o * len + p] = aq;
        k[o * len + p] = ak;
        v[o * len + p] = av;
      }
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < len; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < len; ++j) {
          double dot = 0;
          for (std::size_t a = 0; a < d; ++a) dot += q[(h * d + a) * len + i] * k[(h * d + a) * len + j];
          weights[j] = dot / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, weights[j]);
        }
        double z = 0;
        for (std::size_t j = 0; j < len; ++j) {
          weights[j] = std::exp(weights[j] - mx);
          z += weights[j];
        }
        for (std::size_t a = 0; a < d; ++a) {
          double acc = 0;
          for (std::size_t j = 0; j < len; ++j) acc += weights[j] / z * v[(h * d + a) * len + j];
          mixed[(h * d + a) * len + i] = acc;
        }
      }
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t p = 0; p < len; ++p) {
        double acc = out_bias[o];
        for (std::size_t i = 0; i < c; ++i) acc += out_weight[o * c + i] * mixed[i * len + p];
        out[s * c * len + o * len + p] = static_cast<T>(acc);
      }
  }
  return out;
}

template <typename T>
NdArray<T> linear(const NdArray<T>& input, const NdArray<T>& weight, std::type_identity_t<const NdArray<T>*> bias) {
  const std::size_t n = input.dim(0), in = input.dim(1), outd = weight.dim(0);
  NdArray<T> out({n, outd});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < outd; ++o) {
      T acc = bias ? (*bias)[o] : T(0);
      for (std::size_t i = 0; i < in; ++i) acc += input[s * in + i] * weight[o * in + i];
      out[s * outd + o] = acc;
    }
  return out;
}

template NdArray<float> conv2d(const NdArray<float>&, const NdArray<float>&, const NdArray<float>*, std::size_t,
                               std::size_t);
template NdArray<double> conv2d(const NdArray<double>&, const NdArray<double>&, const NdArray<double>*, std::size_t,
                                std::size_t);
template NdArray<float> group_norm(const NdArray<float>&, std::size_t, const NdArray<float>&, const NdArray<float>&,
                                   float);
template NdArray<double> group_norm(const NdArray<double>&, std::size_t, const NdArray<double>&,
                                    const NdArray<double>&, double);
template NdArray<float> self_attention(const NdArray<float>&, const NdArray<float>&, const NdArray<float>&,
                                       const NdArray<float>&, const NdArray<float>&, std::size_t);
template NdArray<double> self_attention(const NdArray<double>&, const NdArray<double>&, const NdArray<double>&,
                                        const NdArray<double>&, const NdArray<double>&, std::size_t);
template NdArray<float> linear(const NdArray<float>&, const NdArray<float>&, const NdArray<float>*);
template NdArray<double> linear(const NdArray<double>&, const NdArray<double>&, const NdArray<double>*);

}  // namespace repaintlab::nd::reference
