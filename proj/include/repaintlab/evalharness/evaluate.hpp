#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "repaintlab/denoiser/unet.hpp"
#include "repaintlab/metrics/embedder.hpp"
#include "repaintlab/ndcore/ndarray.hpp"
#include "repaintlab/synthlab/synth.hpp"

namespace repaintlab::eval {

/// Smallest region the detector reports with confidence.
inline constexpr double kMinConfidentArea = 64;
inline constexpr std::size_t kMinCellArea = 4;
inline constexpr std::size_t kMaxCellArea = 400;
/// Two intensity modes closer than this are treated as a single (empty) mode.
inline constexpr double kMinModeSeparation = 0.25;

struct DetectedCell {
  double cx = 0, cy = 0;   // centroid, pixel centers at (j + 0.5, i + 0.5)
  std::size_t area = 0;    // pixels
};

struct Detection {
  synth::CellStats stats;            // restricted to the region; mean_size is the detected pixel area
  std::vector<DetectedCell> cells;   // the cells counted in stats
  double threshold = 0;              // NaN when the image has a single intensity mode
  bool low_confidence = false;       // region below kMinConfidentArea
};

/// Two-means global threshold, dark foreground, 4-connected components with
/// area in [4, 400]; a cell belongs to the region when its centroid pixel does.
/// image is [S, S] or [1, S, S]; region is [S, S] with nonzero = inside.
/// Throws DataError for an empty region or mismatched shapes.
Detection detect_cells(const nd::NdArray<float>& image, const nd::NdArray<float>& region);

/// Isodata iteration of the two class means; NaN when no split separates two
/// modes by kMinModeSeparation.
double two_means_threshold(std::span<const float> pixels);

inline constexpr double kRelativeEps = 1e-9;

struct StatError {
  double density = 0;
  double size = 0;
  bool density_degenerate = false;   // intact density 0 but repaired nonzero
  bool size_degenerate = false;
  bool low_confidence = false;
  synth::CellStats intact, repaired;
};

/// Relative density and mean-size errors inside the hole (mask == 0).
StatError cellstat_error(const nd::NdArray<float>& intact, const nd::NdArray<float>& repaired,
                         const nd::NdArray<float>& mask);
/// |b - a| / max(a, eps), or 1 (flagged) when a == 0 and b != 0.
double relative_error(double intact, double repaired, bool* degenerate = nullptr);

struct Consistency {
  bool k1 = false;
  bool k2 = false;
};

/// k1: same argmax; k2: the intact argmax is among the repaired top two.
Consistency classification_consistency(std::span<const double> intact_logits, std::span<const double> repaired_logits);

/// Coverage bins of width 5 % over [5 %, 50 %]; the last bin is closed.
inline constexpr std::size_t kBins = 9;
inline constexpr double kBinWidth = 0.05;
std::size_t coverage_bin(double coverage);

/// Spearman rank correlation with average ranks for ties; 0 when either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// Fills the hole (mask == 0) with the mean intensity of the known pixels.
nd::NdArray<float> mean_fill(const nd::NdArray<float>& image, const nd::NdArray<float>& mask);

/// Mean of (x[p] - x[q])^2 over 4-neighbour pairs with p in the hole and q known.
double boundary_discontinuity(const nd::NdArray<float>& image, const nd::NdArray<float>& mask);

struct EvalConfig {
  std::size_t n = 400;
  int jump = 5;
  std::uint64_t seed = 0;
  std::size_t batch = 16;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j, const std::string& pointer_prefix = "");
};

struct PatchRecord {
  std::size_t index = 0;
  std::size_t sample = 0;   // index into the image pool
  int label = -1;
  double target_coverage = 0;
  double coverage = 0;
  std::uint64_t mask_seed = 0;
  std::size_t bin = 0;
  StatError repaired;
  StatError baseline;
  Consistency consistency;
};

struct BinSummary {
  double lo = 0, hi = 0;
  std::size_t n = 0;
  double k1_rate = 0, k2_rate = 0;
  double density_err_median = 0, size_err_median = 0;
  double baseline_density_err_median = 0, baseline_size_err_median = 0;
};

struct Report {
  EvalConfig config;
  std::vector<PatchRecord> patches;
  std::vector<BinSummary> bins;   // always kBins entries
  double k1_rate = 0, k2_rate = 0;
  double density_err_median = 0, size_err_median = 0;
  double baseline_density_err_median = 0, baseline_size_err_median = 0;
  double spearman_k1 = 0;
  std::optional<double> fcd_repaired_vs_intact;
  std::optional<double> fcd_baseline_vs_intact;

  nlohmann::json to_json() const;
};

/// Progress callback: (patches done, total).
using Progress = std::function<void(std::size_t, std::size_t)>;

/// Repaints n patches drawn from `pool` [M,1,S,S] (labels optional) under
/// masks of uniform coverage in [5 %, 50 %] and scores them against the
/// intact patches and against mean fill. FCD needs n >= the embedder floor and
/// is left empty otherwise.
Report run_evaluation(const denoiser::Checkpoint& model, const metrics::Embedder& embedder,
                      const nd::NdArray<float>& pool, std::span<const int> labels, const EvalConfig& config,
                      const Progress& progress = {});

struct JumpComparison {
  std::vector<int> jumps;
  std::vector<double> mean_discontinuity;   // per jump
  std::size_t n = 0;
};

/// Mean boundary discontinuity of repaints of the same n (patch, mask) pairs
/// under each jump length.
JumpComparison compare_jumps(const denoiser::Checkpoint& model, const nd::NdArray<float>& pool, std::size_t n,
                             const std::vector<int>& jumps, std::uint64_t seed, std::size_t batch = 16);

}  // namespace repaintlab::eval
