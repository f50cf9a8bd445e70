#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "repaintlab/metrics/embedder.hpp"
#include "repaintlab/ndcore/ndarray.hpp"

namespace repaintlab::metrics {

enum class Perturbation { gaussian_noise, gaussian_blur, salt_pepper, dataset_mix };

std::string to_string(Perturbation kind);
/// Accepts the enum spellings ("gaussian_noise", ...); throws ConfigError otherwise.
Perturbation parse_perturbation(const std::string& name);
const std::vector<Perturbation>& all_perturbations();

/// Levels are noise sd, blur sd (pixels), flipped pixel fraction and
/// replaced image fraction respectively.
struct PerturbationSpec {
  Perturbation kind = Perturbation::gaussian_noise;
  std::vector<double> levels;

  /// At least 4 levels, strictly increasing, the first one 0; fractions stay in [0, 1].
  void validate() const;
};

/// Five levels per kind that start at the identity.
PerturbationSpec default_spec(Perturbation kind);

/// Out-of-domain images: random rectangles and stripe bands on a flat
/// background. Image i depends only on (seed, i), so shorter sets are
/// prefixes of longer ones.
nd::NdArray<float> alien_images(std::size_t n, std::size_t size, std::uint64_t seed);
/// Pixelwise N(0, 1) clamped to [-1, 1].
nd::NdArray<float> noise_images(std::size_t n, std::size_t size, std::uint64_t seed);

/// Applies one perturbation level to images [N, 1, S, S]. Noise fields and
/// flip draws are shared across levels for a fixed seed, so flipped pixel
/// sets and mixed-in image sets grow monotonically with the level. Mixing
/// replaces a seeded-permutation prefix of round(level * N) images with
/// aliens[0..k); aliens needs at least N images of the same size.
nd::NdArray<float> perturb(const nd::NdArray<float>& images, Perturbation kind, double level, std::uint64_t seed,
                           const nd::NdArray<float>* aliens = nullptr);

struct BatteryPoint {
  double level = 0;
  double fcd = 0;
};

/// FCD(real, perturb(real, level)) for each level of spec. Mixing uses
/// `aliens` when given and alien_images(seed) otherwise.
std::vector<BatteryPoint> perturbation_battery(const Embedder& model, const nd::NdArray<float>& real,
                                               const PerturbationSpec& spec, std::uint64_t seed,
                                               const nd::NdArray<float>* aliens = nullptr);

/// True when every fcd is strictly above its predecessor.
bool strictly_increasing(const std::vector<BatteryPoint>& curve);

nlohmann::json to_json(Perturbation kind, const std::vector<BatteryPoint>& curve);

}  // namespace repaintlab::metrics
