#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "repaintlab/denoiser/unet.hpp"
#include "repaintlab/diffusion/ddpm.hpp"
#include "repaintlab/ndcore/ndarray.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::repaint {

/// Binary raster [H, W]: 1 marks known (intact) tissue, 0 marks the hole.
using Mask = nd::NdArray<float>;

/// Fraction of hole pixels. Throws DataError if the mask is not strictly 0/1.
double coverage(const Mask& mask);
void check_binary(const Mask& mask, const char* op);

enum class Kind { denoise, renoise };

/// denoise moves t -> t-1, renoise moves t-1 -> t; `t` is the larger index.
struct Transition {
  Kind kind;
  int t;
  bool operator==(const Transition&) const = default;
};

struct RepaintPlan {
  int T = 0;
  int j = 0;
  std::vector<Transition> transitions;
};

/// for t = T..1: for r = 1..j: denoise(t); if r < j: renoise(t)
RepaintPlan make_plan(int T, int j);

/// mask * q_sample(known, t, noise) + (1 - mask) * x_t for a batch; masks is
/// [N, H, W] or a single [H, W] shared by all samples. rngs[i] supplies the
/// known-region noise of sample i.
nd::NdArray<float> composite(const diffusion::NoiseSchedule& s, const nd::NdArray<float>& x_t,
                             const nd::NdArray<float>& known, const Mask& masks, int t, std::span<Rng> rngs);

/// Inpaints the hole of every image in `known` [N,1,S,S]. Chain i draws its
/// initial state and reverse-step noise from rng.fork(i), exactly as
/// diffusion::generate does, and its known-region and renoise draws from
/// separate streams forked off that. Known pixels of the result equal `known`
/// bit for bit. `first_chain` offsets the chain numbering so a long run can
/// be split into calls without changing any draw.
nd::NdArray<float> repaint(const diffusion::NoiseSchedule& s, const denoiser::Checkpoint& model,
                           const nd::NdArray<float>& known, const Mask& masks, int j, const Rng& rng,
                           std::size_t batch = 16, std::size_t first_chain = 0);

}  // namespace repaintlab::repaint
