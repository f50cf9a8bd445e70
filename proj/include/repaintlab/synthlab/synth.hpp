#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "repaintlab/ndcore/ndarray.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::synth {

/// One texture family. Layers stack from the top of the patch; layer i spans
/// heights [boundary[i-1], boundary[i]) as fractions of the patch height.
struct TextureSpec {
  int class_id = 0;
  std::string name;
  std::vector<double> boundaries;     // interior boundaries, strictly increasing in (0, 1)
  std::vector<double> density;        // cells per pixel, one per layer
  std::vector<double> radius_mean;    // pixels, one per layer
  double radius_sd = 0.3;
  double eccentricity_min = 0.0;      // 0 = circle; semi-minor = semi-major * sqrt(1 - e^2)
  double eccentricity_max = 0.5;
  double columnarity = 0.0;           // [0, 1]
  double column_period = 16.0;        // pixels
  double background = 0.5;            // intensity in [-1, 1]
  double cell_intensity = -0.6;
  double cell_intensity_sd = 0.05;
  /// Reject a cell whose diameter overlap with an existing cell exceeds this fraction.
  double max_overlap = 0.6;
  double grain_sd = 0.02;
  /// Per-patch jitter: density scale and layer boundary shift.
  double density_jitter = 0.1;
  double boundary_jitter = 0.03;

  std::size_t layers() const noexcept { return density.size(); }
  /// Layer index at a height fraction in [0, 1).
  std::size_t layer_at(double y_fraction) const;
  /// Throws ConfigError for degenerate specs.
  void validate() const;
  nlohmann::json to_json() const;
  static TextureSpec from_json(const nlohmann::json& j);
};

struct CellRecord {
  double x = 0, y = 0;   // center in pixel coordinates (pixel (i, j) covers [j, j+1) x [i, i+1))
  double a = 0, b = 0;   // semi-axes, a >= b
  double theta = 0;      // orientation of the a axis
  std::size_t layer = 0;

  double area() const noexcept;
  nlohmann::json to_json() const;
  static CellRecord from_json(const nlohmann::json& j);
};

struct CellStats {
  std::size_t count = 0;
  double density = 0;     // count / region_area
  double mean_size = 0;   // mean cell area in pixels
  double region_area = 0;
};

struct GroundTruth {
  std::vector<CellRecord> cells;

  /// Cells whose center lies in a region pixel (region[i] != 0); mean_size
  /// uses the analytic ellipse areas.
  CellStats stats(const nd::NdArray<float>& region) const;
};

struct Patch {
  nd::NdArray<float> pixels;   // [1, S, S], values in [-1, 1]
  GroundTruth truth;
};

/// Renders one patch. Cell count is Poisson with the integrated intensity;
/// each cell is placed by thinning and re-drawn (bounded retries) when it
/// overlaps too much.
Patch generate_patch(const TextureSpec& spec, std::size_t size, std::uint64_t seed);

/// Default texture families (K <= 8), each with a distinct vertical density profile.
std::vector<TextureSpec> default_classes(std::size_t k);

/// Vertical profile of a spec's expected density: `bins` equal height bands,
/// in cells per 100 pixels.
std::vector<double> density_profile(const TextureSpec& spec, std::size_t bins = 16);
/// Mean absolute difference between two profiles.
double profile_distance(const std::vector<double>& a, const std::vector<double>& b);
inline constexpr double kProfileFloor = 0.15;

struct Sample {
  int label = 0;
  std::uint64_t seed = 0;
  Patch patch;
};

struct Corpus {
  std::size_t size = 0;
  std::uint64_t seed = 0;
  std::vector<TextureSpec> classes;
  std::vector<Sample> samples;        // class-major order
  std::vector<std::size_t> train;     // indices into samples
  std::vector<std::size_t> eval;

  /// Stacks the chosen samples into [N, 1, S, S].
  nd::NdArray<float> images(const std::vector<std::size_t>& indices) const;
  std::vector<int> labels(const std::vector<std::size_t>& indices) const;
};

inline constexpr double kTrainFraction = 0.85;

/// K families x n patches each, split 85/15 within every class.
Corpus make_corpus(std::size_t k, std::size_t n_per_class, std::size_t size, std::uint64_t seed);

/// Corpus layout on disk: corpus.json (classes, split lists, per-sample seed and
/// label), images/<index>.png, truth/<index>.jsonl.
void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
/// Loads PNGs (8-bit quantized) and ground truth back.
Corpus load_corpus(const std::filesystem::path& dir);

/// Irregular hole from random-walk brush strokes, trimmed pixel by pixel to
/// round(target * size^2) hole pixels. Known pixels stay connected to the
/// frame border. Returns [S, S], 1 = known, 0 = hole.
nd::NdArray<float> make_mask(std::size_t size, double target_coverage, std::uint64_t seed);
inline constexpr double kMinCoverage = 0.05;
inline constexpr double kMaxCoverage = 0.50;

/// True when every known pixel reaches the frame border through known pixels (4-connected).
bool known_region_reaches_border(const nd::NdArray<float>& mask);

}  // namespace repaintlab::synth
