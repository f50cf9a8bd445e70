#include "repaintlab/repaint/repaint.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "repaintlab/error.hpp"

namespace repaintlab::repaint {

namespace {

/// Pointer to the [H, W] mask plane for sample n.
const float* mask_plane(const Mask& masks, std::size_t n) {
  return masks.rank() == 2 ? masks.data() : masks.data() + n * masks.dim(1) * masks.dim(2);
}

void check_masks(const Mask& masks, const nd::Shape& images, const char* op) {
  check_binary(masks, op);
  if (images.size() != 4) throw ShapeError(op, "rank", "images must be [N, C, H, W], got " + nd::shape_str(images));
  const auto& m = masks.shape();
  const bool shared = m.size() == 2 && m[0] == images[2] && m[1] == images[3];
  const bool per_sample = m.size() == 3 && m[0] == images[0] && m[1] == images[2] && m[2] == images[3];
  if (!shared && !per_sample)
    throw ShapeError(op, "mask", "mask " + nd::shape_str(m) + " does not fit images " + nd::shape_str(images));
}

bool looks_untrained(const denoiser::Checkpoint& model) {
  const auto it = model.params.find("out.conv.w");
  if (it == model.params.end()) return false;
  return std::all_of(it->second.span().begin(), it->second.span().end(), [](float v) { return v == 0.0f; });
}

}  // namespace

void check_binary(const Mask& mask, const char* op) {
  for (const auto v : mask.span())
    if (v != 0.0f && v != 1.0f) throw DataError(std::string(op) + ": mask is not binary (found " + std::to_string(v) + ")");
}

double coverage(const Mask& mask) {
  check_binary(mask, "coverage");
  if (mask.size() == 0) throw DataError("coverage: empty mask");
  const auto holes = std::count(mask.span().begin(), mask.span().end(), 0.0f);
  return static_cast<double>(holes) / static_cast<double>(mask.size());
}

RepaintPlan make_plan(int T, int j) {
  if (T < 1) throw ConfigError("/timesteps", "need T >= 1, got " + std::to_string(T));
  if (j < 1) throw ConfigError("/jump", "need j >= 1, got " + std::to_string(j));
  RepaintPlan plan{T, j, {}};
  plan.transitions.reserve(static_cast<std::size_t>(T) * static_cast<std::size_t>(2 * j - 1));
  for (int t = T; t >= 1; --t)
    for (int r = 1; r <= j; ++r) {
      plan.transitions.push_back({Kind::denoise, t});
      if (r < j) plan.transitions.push_back({Kind::renoise, t});
    }
  return plan;
}

nd::NdArray<float> composite(const diffusion::NoiseSchedule& s, const nd::NdArray<float>& x_t,
                             const nd::NdArray<float>& known, const Mask& masks, int t, std::span<Rng> rngs) {
  if (x_t.shape() != known.shape())
    throw ShapeError("composite", "all", nd::shape_str(x_t.shape()) + " vs " + nd::shape_str(known.shape()));
  check_masks(masks, x_t.shape(), "composite");
  if (x_t.dim(0) != rngs.size())
    throw ShapeError("composite", "N", std::to_string(x_t.dim(0)) + " images with " + std::to_string(rngs.size()) +
                                           " streams");
  s.check_step(t, "composite");
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  const std::size_t c = x_t.dim(1), plane = x_t.dim(2) * x_t.dim(3);
  auto out = nd::NdArray<float>::uninitialized(x_t.shape());
  for (std::size_t n = 0; n < rngs.size(); ++n) {
    const float* m = mask_plane(masks, n);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (n * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double noised = a * known[base + p] + b * rngs[n].normal();  // drawn for every pixel
        out[base + p] = m[p] == 1.0f ? static_cast<float>(noised) : x_t[base + p];
      }
    }
  }
  return out;
}

nd::NdArray<float> repaint(const diffusion::NoiseSchedule& s, const denoiser::Checkpoint& model,
                           const nd::NdArray<float>& known, const Mask& masks, int j, const Rng& rng,
                           std::size_t batch, std::size_t first_chain) {
  if (batch == 0) throw Error("repaint: batch must be positive");
  check_masks(masks, known.shape(), "repaint");
  const auto& cfg = model.config;
  if (known.dim(1) != cfg.in_channels || known.dim(2) != cfg.input_size || known.dim(3) != cfg.input_size)
    throw ShapeError("repaint", "image", "model expects [N, " + std::to_string(cfg.in_channels) + ", " +
                                             std::to_string(cfg.input_size) + ", " + std::to_string(cfg.input_size) +
                                             "], got " + nd::shape_str(known.shape()));
  nd::require_finite(known, "repaint known image");
  if (looks_untrained(model)) spdlog::warn("repaint: checkpoint output layer is all zero; the model looks untrained");
  const auto plan = make_plan(s.T, j);

  const std::size_t n_total = known.dim(0);
  const std::size_t per = known.size() / std::max<std::size_t>(n_total, 1);
  const std::size_t plane = cfg.input_size * cfg.input_size;
  nd::NdArray<float> out(known.shape());
  for (std::size_t start = 0; start < n_total; start += batch) {
    const std::size_t count = std::min(batch, n_total - start);
    std::vector<Rng> chains, known_noise, renoise;
    for (std::size_t i = 0; i < count; ++i) {
      chains.push_back(rng.fork(static_cast<std::uint64_t>(first_chain + start + i)));
      known_noise.push_back(chains.back().fork("repaint/known"));
      renoise.push_back(chains.back().fork("repaint/renoise"));
    }
    const nd::Shape shape{count, cfg.in_channels, cfg.input_size, cfg.input_size};
    nd::NdArray<float> sub_known(shape);
    std::copy_n(known.data() + start * per, count * per, sub_known.data());
    Mask sub_masks = masks;
    if (masks.rank() == 3) {
      sub_masks = Mask({count, cfg.input_size, cfg.input_size});
      std::copy_n(masks.data() + start * plane, count * plane, sub_masks.data());
    }

    auto x = nd::NdArray<float>::uninitialized(shape);
    for (std::size_t i = 0; i < count; ++i) chains[i].fill_normal(std::span<float>(x.data() + i * per, per));
    for (const auto& step : plan.transitions) {
      if (step.kind == Kind::denoise) {
        x = composite(s, x, sub_known, sub_masks, step.t, known_noise);
        x = diffusion::reverse_step(s, model, x, step.t, chains);
      } else {
        auto noise = nd::NdArray<float>::uninitialized(shape);
        for (std::size_t i = 0; i < count; ++i)
          renoise[i].fill_normal(std::span<float>(noise.data() + i * per, per));
        x = diffusion::forward_step(s, x, step.t, noise);
      }
    }
    // exact data fidelity outside the hole
    for (std::size_t i = 0; i < count; ++i) {
      const float* m = mask_plane(sub_masks, i);
      for (std::size_t ch = 0; ch < cfg.in_channels; ++ch) {
        const std::size_t base = (i * cfg.in_channels + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p)
          if (m[p] == 1.0f) x[base + p] = sub_known[base + p];
      }
    }
    std::copy_n(x.data(), x.size(), out.data() + start * per);
  }
  return out;
}

}  // namespace repaintlab::repaint
