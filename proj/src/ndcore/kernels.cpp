#include "repaintlab/ndcore/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace repaintlab::nd::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Output columns [lo, hi) read inside the image for kernel offset k.
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t pad, std::size_t k,
                        std::size_t& lo, std::size_t& hi) {
  // i = o * stride + k - pad must satisfy 0 <= i < in
  lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in + pad) - static_cast<std::ptrdiff_t>(k);
  hi = top <= 0 ? 0 : std::min(out, (static_cast<std::size_t>(top) - 1) / stride + 1);
  if (hi < lo) hi = lo;
}

template <typename T>
void add_into(T* __restrict dst, const T* __restrict src, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

// Sum with a fixed lane layout: vectorizes without reassociation and gives the
// same result for a given sequence wherever it sits in memory.
constexpr std::size_t kLanes = 16;

template <typename T>
double lane_sum(const T* __restrict x, std::size_t n) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += x[i + l];
  double total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  for (; i < n; ++i) total += x[i];
  return total;
}

template <typename T>
double lane_sum_sq(const T* __restrict x, std::size_t n, T mean) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) {
      const T d = x[i + l] - mean;
      acc[l] += d * d;
    }
  double total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  for (; i < n; ++i) total += static_cast<double>(x[i] - mean) * (x[i] - mean);
  return total;
}

template <typename T>
double lane_dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  double total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  for (; i < n; ++i) total += static_cast<double>(a[i]) * b[i];
  return total;
}

// sum_i g[i] * (x[i] - mean), same lane layout as lane_sum.
template <typename T>
double lane_dot_centered(const T* __restrict g, const T* __restrict x, std::size_t n, T mean) {
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += g[i + l] * (x[i + l] - mean);
  double total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  for (; i < n; ++i) total += static_cast<double>(g[i]) * (x[i] - mean);
  return total;
}

template <typename T>
void im2col(const T* img, const Conv2dGeometry& g, T* cols) {
  const std::size_t plane = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      std::size_t ylo, yhi;
      valid_range(g.oh, g.h, g.stride, g.pad, ky, ylo, yhi);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        std::size_t xlo, xhi;
        valid_range(g.ow, g.w, g.stride, g.pad, kx, xlo, xhi);
        T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        std::fill(row, row + ylo * g.ow, T(0));
        std::fill(row + yhi * g.ow, row + plane, T(0));
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          T* out = row + oy * g.ow;
          const T* src = img + (c * g.h + iy) * g.w + (xlo * g.stride + kx - g.pad);
          std::fill(out, out + xlo, T(0));
          std::fill(out + xhi, out + g.ow, T(0));
          if (g.stride == 1) {
            std::copy(src, src + (xhi - xlo), out + xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox] = src[(ox - xlo) * g.stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const Conv2dGeometry& g, T* img) {
  const std::size_t plane = g.oh * g.ow;
  std::fill(img, img + g.c * g.h * g.w, T(0));
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      std::size_t ylo, yhi;
      valid_range(g.oh, g.h, g.stride, g.pad, ky, ylo, yhi);
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        std::size_t xlo, xhi;
        valid_range(g.ow, g.w, g.stride, g.pad, kx, xlo, xhi);
        const T* row = cols + ((c * g.kh + ky) * g.kw + kx) * plane;
        for (std::size_t oy = ylo; oy < yhi; ++oy) {
          const std::size_t iy = oy * g.stride + ky - g.pad;
          T* dst = img + (c * g.h + iy) * g.w + (xlo * g.stride + kx - g.pad);
          const T* in = row + oy * g.ow;
          if (g.stride == 1) {
            add_into(dst, in + xlo, xhi - xlo);
          } else {
            for (std::size_t ox = xlo; ox < xhi; ++ox) dst[(ox - xlo) * g.stride] += in[ox];
          }
        }
      }
    }
  }
}

bool is_pointwise(const Conv2dGeometry& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

template <typename T>
Conv2dGeometry conv2d_geometry(const NdArray<T>& input, const NdArray<T>& kernel, std::size_t stride,
                               std::size_t padding) {
  if (input.rank() != 4) throw ShapeError("conv2d", "rank", "input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (kernel.rank() != 4) {
    throw ShapeError("conv2d", "rank", "kernel must be [K,C,kh,kw], got " + shape_str(kernel.shape()));
  }
  if (kernel.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d", "C", "input has " + std::to_string(input.dim(1)) + " channels, kernel expects " +
                                        std::to_string(kernel.dim(1)));
  }
  if (kernel.dim(2) % 2 == 0) throw ShapeError("conv2d", "kh", "kernel height must be odd");
  if (kernel.dim(3) % 2 == 0) throw ShapeError("conv2d", "kw", "kernel width must be odd");
  if (stride == 0) throw ShapeError("conv2d", "stride", "stride must be positive");
  Conv2dGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2),
                   kernel.dim(3), 0, 0, stride, padding};
  if (g.h + 2 * padding < g.kh) throw ShapeError("conv2d", "H", "kernel taller than padded input");
  if (g.w + 2 * padding < g.kw) throw ShapeError("conv2d", "W", "kernel wider than padded input");
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  return g;
}

template <typename T>
NdArray<T> conv2d(const NdArray<T>& input, const NdArray<T>& kernel, std::type_identity_t<const NdArray<T>*> bias, std::size_t stride,
                  std::size_t padding) {
  const auto g = conv2d_geometry(input, kernel, stride, padding);
  if (bias && bias->size() != g.k) throw ShapeError("conv2d", "K", "bias length must equal output channels");
  auto out = NdArray<T>::uninitialized({g.n, g.k, g.oh, g.ow});
  const std::size_t plane = g.oh * g.ow;
  const std::size_t patch = g.c * g.kh * g.kw;
  ConstMatMap<T> wmat(kernel.data(), static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(patch));
  const bool pointwise = is_pointwise(g);

#pragma omp parallel
  {
    typename NdArray<T>::Storage cols(pointwise ? 0 : patch * plane);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < g.n; ++n) {
      const T* img = input.data() + n * g.c * g.h * g.w;
      const T* src = img;
      if (!pointwise) {
        im2col(img, g, cols.data());
        src = cols.data();
      }
      ConstMatMap<T> cm(src, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
      MatMap<T> om(out.data() + n * g.k * plane, static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(plane));
      om.noalias() = wmat * cm;
      if (bias) {
        for (std::size_t k = 0; k < g.k; ++k) om.row(static_cast<Eigen::Index>(k)).array() += (*bias)[k];
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const NdArray<T>& input, const NdArray<T>& kernel, const NdArray<T>& grad_out,
                     std::size_t stride, std::size_t padding, NdArray<T>* grad_input, NdArray<T>* grad_kernel,
                     NdArray<T>* grad_bias) {
  const auto g = conv2d_geometry(input, kernel, stride, padding);
  if (grad_out.shape() != Shape{g.n, g.k, g.oh, g.ow}) {
    throw ShapeError("conv2d_backward", "grad_out", "expected " + shape_str({g.n, g.k, g.oh, g.ow}));
  }
  const std::size_t plane = g.oh * g.ow;
  const std::size_t patch = g.c * g.kh * g.kw;
  const bool pointwise = is_pointwise(g);
  ConstMatMap<T> wmat(kernel.data(), static_cast<Eigen::Index>(g.k), static_cast<Eigen::Index>(patch));

  if (grad_input) *grad_input = NdArray<T>::uninitialized(input.shape());
  // One kernel-gradient slot per sample, reduced in order afterwards.
  typename NdArray<T>::Storage partial(grad_kernel ? g.n * g.k * patch : 0);

#pragma omp parallel
  {
    typename NdArray<T>::Storage cols(pointwise ? 0 : patch * plane);
    typename NdArray<T>::Storage gcols(pointwise ? 0 : patch * plane);
#pragma omp for schedule(static)
    for (std::size_t n = 0; n < g.n; ++n) {
      ConstMatMap<T> gy(grad_out.data() + n * g.k * plane, static_cast<Eigen::Index>(g.k),
                        static_cast<Eigen::Index>(plane));
      const T* img = input.data() + n * g.c * g.h * g.w;
      if (grad_kernel) {
        const T* src = img;
        if (!pointwise) {
          im2col(img, g, cols.data());
          src = cols.data();
        }
        ConstMatMap<T> cm(src, static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
        MatMap<T> pw(partial.data() + n * g.k * patch, static_cast<Eigen::Index>(g.k),
                     static_cast<Eigen::Index>(patch));
        pw.noalias() = gy * cm.transpose();
      }
      if (grad_input) {
        T* gimg = grad_input->data() + n * g.c * g.h * g.w;
        if (pointwise) {
          MatMap<T> gx(gimg, static_cast<Eigen::Index>(g.c), static_cast<Eigen::Index>(plane));
          gx.noalias() = wmat.transpose() * gy;
        } else {
          MatMap<T> gc(gcols.data(), static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(plane));
          gc.noalias() = wmat.transpose() * gy;
          col2im(gcols.data(), g, gimg);
        }
      }
    }
  }

  if (grad_kernel) {
    *grad_kernel = NdArray<T>(kernel.shape());
    T* dst = grad_kernel->data();
    for (std::size_t n = 0; n < g.n; ++n) {
      const T* src = partial.data() + n * g.k * patch;
      for (std::size_t i = 0; i < g.k * patch; ++i) dst[i] += src[i];
    }
  }
  if (grad_bias) {
    *grad_bias = NdArray<T>(Shape{g.k});
    for (std::size_t n = 0; n < g.n; ++n) {
      for (std::size_t k = 0; k < g.k; ++k) {
        const T* row = grad_out.data() + (n * g.k + k) * plane;
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += row[p];
        (*grad_bias)[k] += acc;
      }
    }
  }
}

template <typename T>
NdArray<T> group_norm(const NdArray<T>& input, std::size_t groups, const NdArray<T>& gain, const NdArray<T>& bias,
                      T eps, GroupNormCache<T>* cache) {
  if (input.rank() != 4) throw ShapeError("group_norm", "rank", "input must be [N,C,H,W]");
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (groups == 0 || c % groups != 0) {
    throw ShapeError("group_norm", "C", std::to_string(groups) + " groups do not divide " + std::to_string(c) +
                                            " channels");
  }
  if (gain.size() != c) throw ShapeError("group_norm", "C", "gain length must equal channels");
  if (bias.size() != c) throw ShapeError("group_norm", "C", "bias length must equal channels");
  const std::size_t cpg = c / groups;
  const std::size_t m = cpg * plane;
  auto out = NdArray<T>::uninitialized(input.shape());
  if (cache) {
    cache->mean.assign(n * groups, T(0));
    cache->rstd.assign(n * groups, T(0));
  }
#pragma omp parallel for schedule(static)
  for (std::size_t ng = 0; ng < n * groups; ++ng) {
    const std::size_t s = ng / groups, grp = ng % groups;
    const T* x = input.data() + (s * c + grp * cpg) * plane;
    const double mean = lane_sum(x, m) / static_cast<double>(m);
    const double sq = lane_sum_sq(x, m, static_cast<T>(mean));
    const double rstd = 1.0 / std::sqrt(sq / static_cast<double>(m) + static_cast<double>(eps));
    T* y = out.data() + (s * c + grp * cpg) * plane;
    for (std::size_t ch = 0; ch < cpg; ++ch) {
      const std::size_t channel = grp * cpg + ch;
      const T a = static_cast<T>(rstd) * gain[channel];
      const T b = bias[channel] - static_cast<T>(mean) * a;
      const T* xc = x + ch * plane;
      T* yc = y + ch * plane;
      for (std::size_t p = 0; p < plane; ++p) yc[p] = xc[p] * a + b;
    }
    if (cache) {
      cache->mean[ng] = static_cast<T>(mean);
      cache->rstd[ng] = static_cast<T>(rstd);
    }
  }
  return out;
}

template <typename T>
void group_norm_backward(const NdArray<T>& input, std::size_t groups, const NdArray<T>& gain,
                         const GroupNormCache<T>& cache, const NdArray<T>& grad_out, NdArray<T>* grad_input,
                         NdArray<T>* grad_gain, NdArray<T>* grad_bias) {
  const std::size_t n = input.dim(0), c = input.dim(1), plane = input.dim(2) * input.dim(3);
  const std::size_t cpg = c / groups;
  const std::size_t m = cpg * plane;
  if (grad_input) *grad_input = NdArray<T>::uninitialized(input.shape());
  // Per-sample partials keep the parameter reduction order fixed.
  std::vector<double> pg(n * c, 0.0), pb(n * c, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t ng = 0; ng < n * groups; ++ng) {
    const std::size_t s = ng / groups, grp = ng % groups;
    const std::size_t off = (s * c + grp * cpg) * plane;
    const T* x = input.data() + off;
    const T* gy = grad_out.data() + off;
    const double mean = cache.mean[ng];
    const double rstd = cache.rstd[ng];
    double sum_gxhat = 0, sum_gxhat_xhat = 0;
    for (std::size_t ch = 0; ch < cpg; ++ch) {
      const std::size_t channel = grp * cpg + ch;
      const double gam = gain[channel];
      const double sb = lane_sum(gy + ch * plane, plane);
      const double sg = lane_dot_centered(gy + ch * plane, x + ch * plane, plane, static_cast<T>(mean)) * rstd;
      pg[s * c + channel] = sg;
      pb[s * c + channel] = sb;
      sum_gxhat += gam * sb;
      sum_gxhat_xhat += gam * sg;
    }
    if (grad_input) {
      const T mg = static_cast<T>(sum_gxhat / static_cast<double>(m));
      const T mgx = static_cast<T>(sum_gxhat_xhat / static_cast<double>(m));
      const T mu = static_cast<T>(mean), rs = static_cast<T>(rstd);
      T* __restrict gx = grad_input->data() + off;
      for (std::size_t ch = 0; ch < cpg; ++ch) {
        const T gam = gain[grp * cpg + ch];
        const T* __restrict xc = x + ch * plane;
        const T* __restrict gc = gy + ch * plane;
        T* __restrict oc = gx + ch * plane;
        for (std::size_t p = 0; p < plane; ++p) oc[p] = rs * (gc[p] * gam - mg - (xc[p] - mu) * rs * mgx);
      }
    }
  }
  if (grad_gain) {
    *grad_gain = NdArray<T>(Shape{c});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) (*grad_gain)[ch] += static_cast<T>(pg[s * c + ch]);
  }
  if (grad_bias) {
    *grad_bias = NdArray<T>(Shape{c});
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t ch = 0; ch < c; ++ch) (*grad_bias)[ch] += static_cast<T>(pb[s * c + ch]);
  }
}

namespace {

template <typename T>
void check_attention_shapes(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& out_weight,
                            std::size_t heads) {
  if (input.rank() != 4) throw ShapeError("self_attention", "rank", "input must be [N,C,H,W]");
  const std::size_t c = input.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("self_attention", "C", std::to_string(heads) + " heads do not divide " + std::to_string(c) +
                                                " channels");
  }
  if (qkv_weight.shape() != Shape{3 * c, c}) {
    throw ShapeError("self_attention", "qkv_weight", "expected " + shape_str({3 * c, c}));
  }
  if (out_weight.shape() != Shape{c, c}) {
    throw ShapeError("self_attention", "out_weight", "expected " + shape_str({c, c}));
  }
}

}  // namespace

template <typename T>
NdArray<T> self_attention(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& qkv_bias,
                          const NdArray<T>& out_weight, const NdArray<T>& out_bias, std::size_t heads,
                          AttentionCache<T>* cache) {
  check_attention_shapes(input, qkv_weight, out_weight, heads);
  const std::size_t n = input.dim(0), c = input.dim(1), len = input.dim(2) * input.dim(3);
  const std::size_t d = c / heads;
  const auto ci = static_cast<Eigen::Index>(c);
  const auto li = static_cast<Eigen::Index>(len);
  const auto di = static_cast<Eigen::Index>(d);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  auto out = NdArray<T>::uninitialized(input.shape());
  auto qkv = NdArray<T>::uninitialized({n, 3 * c, len});
  auto mixed = NdArray<T>::uninitialized({n, c, len});
  NdArray<T> probs;
  if (cache) probs = NdArray<T>::uninitialized({n, heads, len, len});

  ConstMatMap<T> wq(qkv_weight.data(), 3 * ci, ci);
  ConstMatMap<T> wo(out_weight.data(), ci, ci);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bq(qkv_bias.data(), 3 * ci);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bo(out_bias.data(), ci);

#pragma omp parallel
  {
    RowMat<T> scores(li, li), qt(li, di);
#pragma omp for schedule(static)
    for (std::size_t s = 0; s < n; ++s) {
      ConstMatMap<T> x(input.data() + s * c * len, ci, li);
      MatMap<T> proj(qkv.data() + s * 3 * c * len, 3 * ci, li);
      proj.noalias() = wq * x;
      proj.colwise() += bq;
      MatMap<T> mix(mixed.data() + s * c * len, ci, li);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto q = proj.middleRows(static_cast<Eigen::Index>(h * d), di);
        const auto k = proj.middleRows(ci + static_cast<Eigen::Index>(h * d), di);
        const auto v = proj.middleRows(2 * ci + static_cast<Eigen::Index>(h * d), di);
        qt = q.transpose() * scale;
        scores.noalias() = qt * k;
        for (Eigen::Index i = 0; i < li; ++i) {
          auto row = scores.row(i);
          const T mx = row.maxCoeff();
          row = (row.array() - mx).exp();
          row /= static_cast<T>(lane_sum(row.data(), len));
        }
        mix.middleRows(static_cast<Eigen::Index>(h * d), di).noalias() = v * scores.transpose();
        if (cache) {
          MatMap<T> p(probs.data() + (s * heads + h) * len * len, li, li);
          p = scores;
        }
      }
      MatMap<T> y(out.data() + s * c * len, ci, li);
      y.noalias() = wo * mix;
      y.colwise() += bo;
    }
  }
  if (cache) {
    cache->qkv = std::move(qkv);
    cache->probs = std::move(probs);
    cache->mixed = std::move(mixed);
  }
  return out;
}

template <typename T>
void self_attention_backward(const NdArray<T>& input, const NdArray<T>& qkv_weight, const NdArray<T>& out_weight,
                             std::size_t heads, const AttentionCache<T>& cache, const NdArray<T>& grad_out,
                             NdArray<T>* grad_input, NdArray<T>* grad_qkv_weight, NdArray<T>* grad_qkv_bias,
                             NdArray<T>* grad_out_weight, NdArray<T>* grad_out_bias) {
  check_attention_shapes(input, qkv_weight, out_weight, heads);
  const std::size_t n = input.dim(0), c = input.dim(1), len = input.dim(2) * input.dim(3);
  const std::size_t d = c / heads;
  const auto ci = static_cast<Eigen::Index>(c);
  const auto li = static_cast<Eigen::Index>(len);
  const auto di = static_cast<Eigen::Index>(d);
  const T scale = T(1) / std::sqrt(static_cast<T>(d));

  ConstMatMap<T> wq(qkv_weight.data(), 3 * ci, ci);
  ConstMatMap<T> wo(out_weight.data(), ci, ci);

  if (grad_input) *grad_input = NdArray<T>::uninitialized(input.shape());
  typename NdArray<T>::Storage p_wq(n * 3 * c * c), p_bq(n * 3 * c), p_wo(n * c * c), p_bo(n * c);

#pragma omp parallel
  {
    RowMat<T> gmix(ci, li), gqkv(3 * ci, li), gp(li, li);
#pragma omp for schedule(static)
    for (std::size_t s = 0; s < n; ++s) {
      ConstMatMap<T> gy(grad_out.data() + s * c * len, ci, li);
      ConstMatMap<T> mix(cache.mixed.data() + s * c * len, ci, li);
      ConstMatMap<T> proj(cache.qkv.data() + s * 3 * c * len, 3 * ci, li);
      ConstMatMap<T> x(input.data() + s * c * len, ci, li);

      MatMap<T>(p_wo.data() + s * c * c, ci, ci).noalias() = gy * mix.transpose();
      for (std::size_t r = 0; r < c; ++r) p_bo[s * c + r] = static_cast<T>(lane_sum(gy.row(r).data(), len));
      gmix.noalias() = wo.transpose() * gy;

      for (std::size_t h = 0; h < heads; ++h) {
        const auto hd = static_cast<Eigen::Index>(h * d);
        ConstMatMap<T> p(cache.probs.data() + (s * heads + h) * len * len, li, li);
        const auto q = proj.middleRows(hd, di);
        const auto k = proj.middleRows(ci + hd, di);
        const auto v = proj.middleRows(2 * ci + hd, di);
        const auto go = gmix.middleRows(hd, di);
        // mix = v p^T
        gqkv.middleRows(2 * ci + hd, di).noalias() = go * p;
        gp.noalias() = go.transpose() * v;
        // softmax backward, row-wise
        for (Eigen::Index i = 0; i < li; ++i) {
          const T dot = static_cast<T>(lane_dot(gp.row(i).data(), p.row(i).data(), len));
          gp.row(i) = (p.row(i).array() * (gp.row(i).array() - dot)).matrix();
        }
        gqkv.middleRows(hd, di).noalias() = (k * gp.transpose()) * scale;
        gqkv.middleRows(ci + hd, di).noalias() = (q * gp) * scale;
      }
      MatMap<T>(p_wq.data() + s * 3 * c * c, 3 * ci, ci).noalias() = gqkv * x.transpose();
      for (std::size_t r = 0; r < 3 * c; ++r) p_bq[s * 3 * c + r] = static_cast<T>(lane_sum(gqkv.row(r).data(), len));
      if (grad_input) {
        MatMap<T>(grad_input->data() + s * c * len, ci, li).noalias() = wq.transpose() * gqkv;
      }
    }
  }

  auto reduce = [n](const typename NdArray<T>::Storage& partial, std::size_t len_each, Shape shape) {
    NdArray<T> acc(std::move(shape));
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < len_each; ++i) acc[i] += partial[s * len_each + i];
    return acc;
  };
  if (grad_qkv_weight) *grad_qkv_weight = reduce(p_wq, 3 * c * c, {3 * c, c});
  if (grad_qkv_bias) *grad_qkv_bias = reduce(p_bq, 3 * c, {3 * c});
  if (grad_out_weight) *grad_out_weight = reduce(p_wo, c * c, {c, c});
  if (grad_out_bias) *grad_out_bias = reduce(p_bo, c, {c});
}

template <typename T>
NdArray<T> linear(const NdArray<T>& input, const NdArray<T>& weight, std::type_identity_t<const NdArray<T>*> bias) {
  if (input.rank() != 2) throw ShapeError("linear", "rank", "input must be [N,in]");
  if (weight.rank() != 2 || weight.dim(1) != input.dim(1)) {
    throw ShapeError("linear", "in", "weight " + shape_str(weight.shape()) + " incompatible with input " +
                                         shape_str(input.shape()));
  }
  const auto n = static_cast<Eigen::Index>(input.dim(0));
  const auto in = static_cast<Eigen::Index>(input.dim(1));
  const auto outd = static_cast<Eigen::Index>(weight.dim(0));
  if (bias && bias->size() != weight.dim(0)) throw ShapeError("linear", "out", "bias length must equal outputs");
  auto out = NdArray<T>::uninitialized({input.dim(0), weight.dim(0)});
  ConstMatMap<T> w(weight.data(), outd, in);
  // One product per sample so that a row's result does not depend on the batch size.
  for (Eigen::Index s = 0; s < n; ++s) {
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(out.data() + s * outd, outd);
    y.noalias() = w * Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(input.data() + s * in, in);
    if (bias) y += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias->data(), outd);
  }
  return out;
}

template <typename T>
void linear_backward(const NdArray<T>& input, const NdArray<T>& weight, const NdArray<T>& grad_out,
                     NdArray<T>* grad_input, NdArray<T>* grad_weight, NdArray<T>* grad_bias) {
  const auto n = static_cast<Eigen::Index>(input.dim(0));
  const auto in = static_cast<Eigen::Index>(input.dim(1));
  const auto outd = static_cast<Eigen::Index>(weight.dim(0));
  ConstMatMap<T> gy(grad_out.data(), n, outd);
  if (grad_input) {
    *grad_input = NdArray<T>::uninitialized(input.shape());
    MatMap<T>(grad_input->data(), n, in).noalias() = gy * ConstMatMap<T>(weight.data(), outd, in);
  }
  if (grad_weight) {
    *grad_weight = NdArray<T>::uninitialized(weight.shape());
    MatMap<T>(grad_weight->data(), outd, in).noalias() = gy.transpose() * ConstMatMap<T>(input.data(), n, in);
  }
  if (grad_bias) {
    *grad_bias = NdArray<T>(Shape{weight.dim(0)});
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index o = 0; o < outd; ++o) (*grad_bias)[static_cast<std::size_t>(o)] += gy(i, o);
  }
}

#define REPAINTLAB_INSTANTIATE(T)                                                                                  \
  template Conv2dGeometry conv2d_geometry(const NdArray<T>&, const NdArray<T>&, std::size_t, std::size_t);        \
  template NdArray<T> conv2d(const NdArray<T>&, const NdArray<T>&, const NdArray<T>*, std::size_t, std::size_t); \
  template void conv2d_backward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, std::size_t,            \
                                std::size_t, NdArray<T>*, NdArray<T>*, NdArray<T>*);                             \
  template NdArray<T> group_norm(const NdArray<T>&, std::size_t, const NdArray<T>&, const NdArray<T>&, T,        \
                                 GroupNormCache<T>*);                                                             \
  template void group_norm_backward(const NdArray<T>&, std::size_t, const NdArray<T>&, const GroupNormCache<T>&, \
                                    const NdArray<T>&, NdArray<T>*, NdArray<T>*, NdArray<T>*);                   \
  template NdArray<T> self_attention(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, \
                                     const NdArray<T>&, std::size_t, AttentionCache<T>*);                        \
  template void self_attention_backward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, std::size_t,    \
                                        const AttentionCache<T>&, const NdArray<T>&, NdArray<T>*, NdArray<T>*,   \
                                        NdArray<T>*, NdArray<T>*, NdArray<T>*);                                  \
  template NdArray<T> linear(const NdArray<T>&, const NdArray<T>&, const NdArray<T>*);                           \
  template void linear_backward(const NdArray<T>&, const NdArray<T>&, const NdArray<T>&, NdArray<T>*,            \
                                NdArray<T>*, NdArray<T>*);

REPAINTLAB_INSTANTIATE(float)
REPAINTLAB_INSTANTIATE(double)

#undef REPAINTLAB_INSTANTIATE

}  // namespace repaintlab::nd::kernels
