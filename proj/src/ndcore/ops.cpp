#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "repaintlab/ndcore/kernels.hpp"
#include "repaintlab/ndcore/tape.hpp"

namespace repaintlab::nd::ops {

namespace {

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(op, "all", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
using Buffer = Eigen::Array<T, Eigen::Dynamic, 1>;

// Multiple of every SIMD packet width, so a full buffer has no scalar tail.
constexpr std::size_t kChunk = 16384;

// Transcendentals are evaluated on aligned, fully padded buffers: every
// element then takes the same vectorized path whatever its offset, which keeps
// batched and single-sample results bit-identical.
template <typename T>
Buffer<T> load_padded(const T* src, std::size_t len) {
  Buffer<T> b(static_cast<Eigen::Index>(kChunk));
  std::copy_n(src, len, b.data());
  std::fill(b.data() + len, b.data() + kChunk, T(0));
  return b;
}

template <typename F>
void for_chunks(std::size_t n, F&& f) {
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
#pragma omp parallel for schedule(static)
  for (std::size_t c = 0; c < chunks; ++c) f(c * kChunk, std::min(kChunk, n - c * kChunk));
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto out = NdArray<T>::uninitialized(av.shape());
#pragma omp parallel for simd schedule(static)
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const NdArray<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto out = NdArray<T>::uninitialized(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const NdArray<T>& g) {
    t.accumulate(a, g);
    auto neg = NdArray<T>::uninitialized(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
    t.accumulate(b, std::move(neg));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  auto out = NdArray<T>::uninitialized(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const NdArray<T>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    auto ga = NdArray<T>::uninitialized(g.shape());
    auto gb = NdArray<T>::uninitialized(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    t.accumulate(a, std::move(ga));
    t.accumulate(b, std::move(gb));
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  const auto& av = a.value();
  auto out = NdArray<T>::uninitialized(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape->push(std::move(out), {a}, [a, factor](Tape<T>& t, const NdArray<T>& g) {
    auto ga = NdArray<T>::uninitialized(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * factor;
    t.accumulate(a, std::move(ga));
  });
}

template <typename T>
Var<T> add_channel(Var<T> x, Var<T> e) {
  const auto& xv = x.value();
  const auto& ev = e.value();
  if (xv.rank() != 4) throw ShapeError("add_channel", "rank", "x must be [N,C,H,W]");
  if (ev.shape() != Shape{xv.dim(0), xv.dim(1)}) {
    throw ShapeError("add_channel", "C", "embedding " + shape_str(ev.shape()) + " does not match " +
                                             shape_str(xv.shape()));
  }
  const std::size_t nc = xv.dim(0) * xv.dim(1);
  const std::size_t plane = xv.dim(2) * xv.dim(3);
  auto out = NdArray<T>::uninitialized(xv.shape());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t p = 0; p < plane; ++p) out[i * plane + p] = xv[i * plane + p] + ev[i];
  return x.tape->push(std::move(out), {x, e}, [x, e, nc, plane](Tape<T>& t, const NdArray<T>& g) {
    t.accumulate(x, g);
    if (t.requires_grad(e)) {
      NdArray<T> ge(t.value(e).shape());
      for (std::size_t i = 0; i < nc; ++i) {
        T acc = 0;
        for (std::size_t p = 0; p < plane; ++p) acc += g[i * plane + p];
        ge[i] = acc;
      }
      t.accumulate(e, std::move(ge));
    }
  });
}

template <typename T>
Var<T> silu(Var<T> x) {
  const auto& xv = x.value();
  auto out = NdArray<T>::uninitialized(xv.shape());
  for_chunks(out.size(), [&](std::size_t lo, std::size_t len) {
    const Buffer<T> xb = load_padded(xv.data() + lo, len);
    const Buffer<T> y = xb / (T(1) + (-xb).exp());
    std::copy_n(y.data(), len, out.data() + lo);
  });
  return x.tape->push(std::move(out), {x}, [x](Tape<T>& t, const NdArray<T>& g) {
    const auto& xv = t.value(x);
    auto gx = NdArray<T>::uninitialized(g.shape());
    for_chunks(g.size(), [&](std::size_t lo, std::size_t len) {
      const Buffer<T> xb = load_padded(xv.data() + lo, len);
      const Buffer<T> gb = load_padded(g.data() + lo, len);
      const Buffer<T> sig = T(1) / (T(1) + (-xb).exp());
      const Buffer<T> r = gb * sig * (T(1) + xb * (T(1) - sig));
      std::copy_n(r.data(), len, gx.data() + lo);
    });
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  const auto& xv = x.value();
  auto out = NdArray<T>::uninitialized(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(xv[i]);
  auto saved = std::make_shared<NdArray<T>>(out);
  return x.tape->push(std::move(out), {x}, [x, saved](Tape<T>& t, const NdArray<T>& g) {
    auto gx = NdArray<T>::uninitialized(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (*saved)[i] * (T(1) - (*saved)[i]);
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> square(Var<T> x) {
  const auto& xv = x.value();
  auto out = NdArray<T>::uninitialized(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  return x.tape->push(std::move(out), {x}, [x](Tape<T>& t, const NdArray<T>& g) {
    const auto& xv = t.value(x);
    auto gx = NdArray<T>::uninitialized(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = T(2) * xv[i] * g[i];
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const auto& xv = x.value();
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  return x.tape->push(NdArray<T>::scalar(static_cast<T>(acc)), {x}, [x](Tape<T>& t, const NdArray<T>& g) {
    t.accumulate(x, NdArray<T>(t.value(x).shape(), g[0]));
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const auto& xv = x.value();
  double acc = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i];
  const T inv = T(1) / static_cast<T>(xv.size());
  return x.tape->push(NdArray<T>::scalar(static_cast<T>(acc / static_cast<double>(xv.size()))), {x},
                      [x, inv](Tape<T>& t, const NdArray<T>& g) {
                        t.accumulate(x, NdArray<T>(t.value(x).shape(), g[0] * inv));
                      });
}

template <typename T>
Var<T> mse(Var<T> a, const NdArray<T>& target) {
  const auto& av = a.value();
  if (av.shape() != target.shape()) {
    throw ShapeError("mse", "all", shape_str(av.shape()) + " vs " + shape_str(target.shape()));
  }
  auto diff = std::make_shared<NdArray<T>>(av.shape());
  double acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*diff)[i] = av[i] - target[i];
    acc += static_cast<double>((*diff)[i]) * (*diff)[i];
  }
  const T factor = T(2) / static_cast<T>(av.size());
  return a.tape->push(NdArray<T>::scalar(static_cast<T>(acc / static_cast<double>(av.size()))), {a},
                      [a, diff, factor](Tape<T>& t, const NdArray<T>& g) {
                        auto ga = NdArray<T>::uninitialized(diff->shape());
                        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = (*diff)[i] * factor * g[0];
                        t.accumulate(a, std::move(ga));
                      });
}

template <typename T>
Var<T> pointwise(Var<T> x, NdArray<T> values, NdArray<T> derivatives) {
  if (values.shape() != x.shape() || derivatives.shape() != x.shape()) {
    throw ShapeError("pointwise", "all", "values/derivatives must match input " + shape_str(x.shape()));
  }
  auto deriv = std::make_shared<NdArray<T>>(std::move(derivatives));
  return x.tape->push(std::move(values), {x}, [x, deriv](Tape<T>& t, const NdArray<T>& g) {
    auto gx = NdArray<T>::uninitialized(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (*deriv)[i];
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, std::type_identity_t<const Var<T>*> bias, std::size_t stride, std::size_t padding) {
  auto out = kernels::conv2d(x.value(), kernel.value(), bias ? &bias->value() : nullptr, stride, padding);
  const bool has_bias = bias != nullptr;
  const Var<T> b = has_bias ? *bias : Var<T>{};
  if (has_bias) {
    return x.tape->push(std::move(out), {x, kernel, b},
                        [x, kernel, b, stride, padding](Tape<T>& t, const NdArray<T>& g) {
                          NdArray<T> gx, gk, gb;
                          kernels::conv2d_backward(t.value(x), t.value(kernel), g, stride, padding,
                                                   t.requires_grad(x) ? &gx : nullptr,
                                                   t.requires_grad(kernel) ? &gk : nullptr,
                                                   t.requires_grad(b) ? &gb : nullptr);
                          if (!gx.empty()) t.accumulate(x, std::move(gx));
                          if (!gk.empty()) t.accumulate(kernel, std::move(gk));
                          if (!gb.empty()) t.accumulate(b, std::move(gb));
                        });
  }
  return x.tape->push(std::move(out), {x, kernel}, [x, kernel, stride, padding](Tape<T>& t, const NdArray<T>& g) {
    NdArray<T> gx, gk;
    kernels::conv2d_backward(t.value(x), t.value(kernel), g, stride, padding, t.requires_grad(x) ? &gx : nullptr,
                             t.requires_grad(kernel) ? &gk : nullptr, static_cast<NdArray<T>*>(nullptr));
    if (!gx.empty()) t.accumulate(x, std::move(gx));
    if (!gk.empty()) t.accumulate(kernel, std::move(gk));
  });
}

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gain, Var<T> bias, T eps) {
  auto& tape = *x.tape;
  if (!tape.recording()) {
    return tape.push(kernels::group_norm(x.value(), groups, gain.value(), bias.value(), eps), {}, nullptr);
  }
  auto cache = std::make_shared<kernels::GroupNormCache<T>>();
  auto out = kernels::group_norm(x.value(), groups, gain.value(), bias.value(), eps, cache.get());
  return tape.push(std::move(out), {x, gain, bias}, [x, gain, bias, groups, cache](Tape<T>& t, const NdArray<T>& g) {
    NdArray<T> gx, gg, gb;
    kernels::group_norm_backward(t.value(x), groups, t.value(gain), *cache, g, t.requires_grad(x) ? &gx : nullptr,
                                 t.requires_grad(gain) ? &gg : nullptr, t.requires_grad(bias) ? &gb : nullptr);
    if (!gx.empty()) t.accumulate(x, std::move(gx));
    if (!gg.empty()) t.accumulate(gain, std::move(gg));
    if (!gb.empty()) t.accumulate(bias, std::move(gb));
  });
}

template <typename T>
Var<T> self_attention(Var<T> x, Var<T> qkv_weight, Var<T> qkv_bias, Var<T> out_weight, Var<T> out_bias,
                      std::size_t heads) {
  auto& tape = *x.tape;
  if (!tape.recording()) {
    return tape.push(kernels::self_attention(x.value(), qkv_weight.value(), qkv_bias.value(), out_weight.value(),
                                             out_bias.value(), heads),
                     {}, nullptr);
  }
  auto cache = std::make_shared<kernels::AttentionCache<T>>();
  auto out = kernels::self_attention(x.value(), qkv_weight.value(), qkv_bias.value(), out_weight.value(),
                                     out_bias.value(), heads, cache.get());
  return tape.push(std::move(out), {x, qkv_weight, qkv_bias, out_weight, out_bias},
                   [x, qkv_weight, qkv_bias, out_weight, out_bias, heads, cache](Tape<T>& t, const NdArray<T>& g) {
                     NdArray<T> gx, gwq, gbq, gwo, gbo;
                     kernels::self_attention_backward(
                         t.value(x), t.value(qkv_weight), t.value(out_weight), heads, *cache, g,
                         t.requires_grad(x) ? &gx : nullptr, t.requires_grad(qkv_weight) ? &gwq : nullptr,
                         t.requires_grad(qkv_bias) ? &gbq : nullptr, t.requires_grad(out_weight) ? &gwo : nullptr,
                         t.requires_grad(out_bias) ? &gbo : nullptr);
                     if (!gx.empty()) t.accumulate(x, std::move(gx));
                     if (!gwq.empty()) t.accumulate(qkv_weight, std::move(gwq));
                     if (!gbq.empty()) t.accumulate(qkv_bias, std::move(gbq));
                     if (!gwo.empty()) t.accumulate(out_weight, std::move(gwo));
                     if (!gbo.empty()) t.accumulate(out_bias, std::move(gbo));
                   });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, std::type_identity_t<const Var<T>*> bias) {
  auto out = kernels::linear(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  const bool has_bias = bias != nullptr;
  const Var<T> b = has_bias ? *bias : Var<T>{};
  auto backward = [x, weight, b, has_bias](Tape<T>& t, const NdArray<T>& g) {
    NdArray<T> gx, gw, gb;
    kernels::linear_backward(t.value(x), t.value(weight), g, t.requires_grad(x) ? &gx : nullptr,
                             t.requires_grad(weight) ? &gw : nullptr,
                             has_bias && t.requires_grad(b) ? &gb : nullptr);
    if (!gx.empty()) t.accumulate(x, std::move(gx));
    if (!gw.empty()) t.accumulate(weight, std::move(gw));
    if (!gb.empty()) t.accumulate(b, std::move(gb));
  };
  if (has_bias) return x.tape->push(std::move(out), {x, weight, b}, std::move(backward));
  return x.tape->push(std::move(out), {x, weight}, std::move(backward));
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 4 || bv.rank() != 4) throw ShapeError("concat_channels", "rank", "inputs must be [N,C,H,W]");
  if (av.dim(0) != bv.dim(0)) throw ShapeError("concat_channels", "N", "batch sizes differ");
  if (av.dim(2) != bv.dim(2)) throw ShapeError("concat_channels", "H", "heights differ");
  if (av.dim(3) != bv.dim(3)) throw ShapeError("concat_channels", "W", "widths differ");
  const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), plane = av.dim(2) * av.dim(3);
  auto out = NdArray<T>::uninitialized({n, ca + cb, av.dim(2), av.dim(3)});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(av.data() + s * ca * plane, ca * plane, out.data() + s * (ca + cb) * plane);
    std::copy_n(bv.data() + s * cb * plane, cb * plane, out.data() + s * (ca + cb) * plane + ca * plane);
  }
  return a.tape->push(std::move(out), {a, b}, [a, b, n, ca, cb, plane](Tape<T>& t, const NdArray<T>& g) {
    if (t.requires_grad(a)) {
      auto ga = NdArray<T>::uninitialized(t.value(a).shape());
      for (std::size_t s = 0; s < n; ++s)
        std::copy_n(g.data() + s * (ca + cb) * plane, ca * plane, ga.data() + s * ca * plane);
      t.accumulate(a, std::move(ga));
    }
    if (t.requires_grad(b)) {
      auto gb = NdArray<T>::uninitialized(t.value(b).shape());
      for (std::size_t s = 0; s < n; ++s)
        std::copy_n(g.data() + s * (ca + cb) * plane + ca * plane, cb * plane, gb.data() + s * cb * plane);
      t.accumulate(b, std::move(gb));
    }
  });
}

template <typename T>
Var<T> channel_slice(Var<T> x, std::size_t begin, std::size_t count) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("channel_slice", "rank", "input must be [N,C,H,W]");
  if (count == 0 || begin + count > xv.dim(1)) throw ShapeError("channel_slice", "C", "slice out of range");
  const std::size_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  auto out = NdArray<T>::uninitialized({n, count, xv.dim(2), xv.dim(3)});
  for (std::size_t s = 0; s < n; ++s)
    std::copy_n(xv.data() + (s * c + begin) * plane, count * plane, out.data() + s * count * plane);
  return x.tape->push(std::move(out), {x}, [x, n, c, begin, count, plane](Tape<T>& t, const NdArray<T>& g) {
    NdArray<T> gx(t.value(x).shape());
    for (std::size_t s = 0; s < n; ++s)
      std::copy_n(g.data() + s * count * plane, count * plane, gx.data() + (s * c + begin) * plane);
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("upsample_nearest2x", "rank", "input must be [N,C,H,W]");
  const std::size_t nc = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  auto out = NdArray<T>::uninitialized({xv.dim(0), xv.dim(1), 2 * h, 2 * w});
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < nc; ++i)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(i * 2 * h + y) * 2 * w + xx] = xv[(i * h + y / 2) * w + xx / 2];
  return x.tape->push(std::move(out), {x}, [x, nc, h, w](Tape<T>& t, const NdArray<T>& g) {
    NdArray<T> gx(t.value(x).shape());
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx) gx[(i * h + y / 2) * w + xx / 2] += g[(i * 2 * h + y) * 2 * w + xx];
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("global_avg_pool", "rank", "input must be [N,C,H,W]");
  const std::size_t nc = xv.dim(0) * xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  NdArray<T> out({xv.dim(0), xv.dim(1)});
  for (std::size_t i = 0; i < nc; ++i) {
    double acc = 0;
    for (std::size_t p = 0; p < plane; ++p) acc += xv[i * plane + p];
    out[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return x.tape->push(std::move(out), {x}, [x, nc, plane](Tape<T>& t, const NdArray<T>& g) {
    auto gx = NdArray<T>::uninitialized(t.value(x).shape());
    const T inv = T(1) / static_cast<T>(plane);
    for (std::size_t i = 0; i < nc; ++i)
      for (std::size_t p = 0; p < plane; ++p) gx[i * plane + p] = g[i] * inv;
    t.accumulate(x, std::move(gx));
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& labels) {
  const auto& lv = logits.value();
  if (lv.rank() != 2) throw ShapeError("cross_entropy", "rank", "logits must be [N,K]");
  const std::size_t n = lv.dim(0), k = lv.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy", "N", "label count must equal batch size");
  auto probs = std::make_shared<NdArray<T>>(lv.shape());
  double loss = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (labels[s] < 0 || static_cast<std::size_t>(labels[s]) >= k) throw Error("cross_entropy: label out of range");
    T mx = lv[s * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lv[s * k + j]);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(lv[s * k + j] - mx));
    for (std::size_t j = 0; j < k; ++j) (*probs)[s * k + j] = static_cast<T>(std::exp(lv[s * k + j] - mx) / z);
    loss += -(static_cast<double>(lv[s * k + static_cast<std::size_t>(labels[s])] - mx) - std::log(z));
  }
  return logits.tape->push(NdArray<T>::scalar(static_cast<T>(loss / static_cast<double>(n))), {logits},
                           [logits, probs, labels, n, k](Tape<T>& t, const NdArray<T>& g) {
                             NdArray<T> gl(probs->shape());
                             const T f = g[0] / static_cast<T>(n);
                             for (std::size_t s = 0; s < n; ++s)
                               for (std::size_t j = 0; j < k; ++j)
                                 gl[s * k + j] = f * ((*probs)[s * k + j] -
                                                      (static_cast<int>(j) == labels[s] ? T(1) : T(0)));
                             t.accumulate(logits, std::move(gl));
                           });
}

#define REPAINTLAB_INSTANTIATE(T)                                                                         \
  template Var<T> add(Var<T>, Var<T>);                                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                                    \
  template Var<T> scale(Var<T>, T);                                                                       \
  template Var<T> add_channel(Var<T>, Var<T>);                                                            \
  template Var<T> silu(Var<T>);                                                                           \
  template Var<T> sigmoid(Var<T>);                                                                        \
  template Var<T> square(Var<T>);                                                                         \
  template Var<T> sum(Var<T>);                                                                            \
  template Var<T> mean(Var<T>);                                                                           \
  template Var<T> mse(Var<T>, const NdArray<T>&);                                                         \
  template Var<T> pointwise(Var<T>, NdArray<T>, NdArray<T>);                                              \
  template Var<T> conv2d(Var<T>, Var<T>, const Var<T>*, std::size_t, std::size_t);                       \
  template Var<T> group_norm(Var<T>, std::size_t, Var<T>, Var<T>, T);                                     \
  template Var<T> self_attention(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, std::size_t);                    \
  template Var<T> linear(Var<T>, Var<T>, const Var<T>*);                                                  \
  template Var<T> concat_channels(Var<T>, Var<T>);                                                        \
  template Var<T> channel_slice(Var<T>, std::size_t, std::size_t);                                        \
  template Var<T> upsample_nearest2x(Var<T>);                                                             \
  template Var<T> global_avg_pool(Var<T>);                                                                \
  template Var<T> cross_entropy(Var<T>, const std::vector<int>&);

REPAINTLAB_INSTANTIATE(float)
REPAINTLAB_INSTANTIATE(double)

#undef REPAINTLAB_INSTANTIATE

}  // namespace repaintlab::nd::ops
