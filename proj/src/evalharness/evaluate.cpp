#include "repaintlab/evalharness/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <string>

#include "repaintlab/diffusion/ddpm.hpp"
#include "repaintlab/error.hpp"
#include "repaintlab/metrics/frechet.hpp"
#include "repaintlab/repaint/repaint.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::eval {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t side_of(const nd::NdArray<float>& image, const char* op) {
  const auto& s = image.shape();
  if (s.size() == 2 && s[0] == s[1]) return s[0];
  if (s.size() == 3 && s[0] == 1 && s[1] == s[2]) return s[1];
  throw ShapeError(op, "image", "need [S, S] or [1, S, S], got " + nd::shape_str(s));
}

void check_mask(const nd::NdArray<float>& mask, std::size_t side, const char* op) {
  if (mask.rank() != 2 || mask.dim(0) != side || mask.dim(1) != side)
    throw ShapeError(op, "mask", "need [" + std::to_string(side) + ", " + std::to_string(side) + "], got " +
                                     nd::shape_str(mask.shape()));
}

double median_or_nan(std::vector<double> v) { return v.empty() ? kNaN : diffusion::median(std::move(v)); }

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t k = i;
    while (k + 1 < order.size() && v[order[k + 1]] == v[order[i]]) ++k;
    const double avg = 0.5 * static_cast<double>(i + k) + 1.0;
    for (std::size_t m = i; m <= k; ++m) r[order[m]] = avg;
    i = k + 1;
  }
  return r;
}

/// One hole per patch, seeded per index so any patch can be replayed alone.
struct PatchPlan {
  std::size_t sample = 0;
  double target = 0;
  std::uint64_t mask_seed = 0;
};

std::vector<PatchPlan> plan_patches(std::size_t n, std::size_t pool, const Rng& root) {
  std::vector<std::size_t> order(pool);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), root.fork("pool-order").engine());
  std::vector<PatchPlan> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng r = root.fork("patch").fork(static_cast<std::uint64_t>(i));
    out[i].sample = order[i % pool];
    out[i].target = r.uniform(synth::kMinCoverage, synth::kMaxCoverage);
    out[i].mask_seed = r.fork("mask").seed();
  }
  return out;
}

void check_pool(const nd::NdArray<float>& pool, const denoiser::DenoiserConfig& cfg) {
  if (pool.rank() != 4 || pool.dim(1) != 1 || pool.dim(2) != cfg.input_size || pool.dim(3) != cfg.input_size)
    throw ShapeError("evaluate", "image", "pool must be [M, 1, " + std::to_string(cfg.input_size) + ", " +
                                              std::to_string(cfg.input_size) + "], got " + nd::shape_str(pool.shape()));
  if (pool.dim(0) == 0) throw DataError("evaluate: the image pool is empty");
}

struct Batch {
  nd::NdArray<float> intact;   // [n, 1, S, S]
  nd::NdArray<float> masks;    // [n, S, S]
};

Batch gather(const nd::NdArray<float>& pool, const std::vector<PatchPlan>& plans) {
  const std::size_t s = pool.dim(2), per = s * s, n = plans.size();
  Batch b{nd::NdArray<float>::uninitialized({n, 1, s, s}), nd::NdArray<float>::uninitialized({n, s, s})};
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(n); ++k) {
    const auto i = static_cast<std::size_t>(k);
    std::copy_n(pool.data() + plans[i].sample * per, per, b.intact.data() + i * per);
    const auto m = synth::make_mask(s, plans[i].target, plans[i].mask_seed);
    std::copy_n(m.data(), per, b.masks.data() + i * per);
  }
  return b;
}

/// Repaints in groups so a failure names the patches involved.
nd::NdArray<float> repaint_all(const denoiser::Checkpoint& model, const Batch& b, int jump, const Rng& rng,
                               std::uint64_t seed, std::size_t batch, const Progress& progress) {
  const auto sched = diffusion::cosine_schedule(static_cast<int>(model.config.timesteps));
  const std::size_t n = b.intact.dim(0), s = b.intact.dim(2), per = s * s;
  nd::NdArray<float> out(b.intact.shape());
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    auto known = nd::NdArray<float>::uninitialized({count, 1, s, s});
    auto masks = nd::NdArray<float>::uninitialized({count, s, s});
    std::copy_n(b.intact.data() + start * per, count * per, known.data());
    std::copy_n(b.masks.data() + start * per, count * per, masks.data());
    try {
      const auto r = repaint::repaint(sched, model, known, masks, jump, rng, batch, start);
      std::copy_n(r.data(), r.size(), out.data() + start * per);
    } catch (const Error& e) {
      throw Error("evaluation failed on patches " + std::to_string(start) + ".." + std::to_string(start + count - 1) +
                  " (seed " + std::to_string(seed) + "): " + e.what());
    }
    if (progress) progress(start + count, n);
  }
  return out;
}

nd::NdArray<float> plane(const nd::NdArray<float>& stack, std::size_t i) {
  const std::size_t s = stack.dim(stack.rank() - 1), per = s * s;
  auto out = nd::NdArray<float>::uninitialized({s, s});
  std::copy_n(stack.data() + i * per, per, out.data());
  return out;
}

nlohmann::json stats_json(const synth::CellStats& s) {
  return {{"count", s.count}, {"density", s.density}, {"mean_size", s.mean_size}, {"region_area", s.region_area}};
}

nlohmann::json error_json(const StatError& e) {
  return {{"density_err", e.density},
          {"size_err", e.size},
          {"density_degenerate", e.density_degenerate},
          {"size_degenerate", e.size_degenerate},
          {"low_confidence", e.low_confidence},
          {"intact", stats_json(e.intact)},
          {"repaired", stats_json(e.repaired)}};
}

}  // namespace

double two_means_threshold(std::span<const float> pixels) {
  if (pixels.empty()) return kNaN;
  double t = 0;
  for (const float v : pixels) t += v;
  t /= static_cast<double>(pixels.size());
  double lo = 0, hi = 0;
  for (int iter = 0; iter < 100; ++iter) {
    double sum_lo = 0, sum_hi = 0;
    std::size_t n_lo = 0, n_hi = 0;
    for (const float v : pixels) {
      if (v <= t) {
        sum_lo += v;
        ++n_lo;
      } else {
        sum_hi += v;
        ++n_hi;
      }
    }
    if (n_lo == 0 || n_hi == 0) return kNaN;
    lo = sum_lo / static_cast<double>(n_lo);
    hi = sum_hi / static_cast<double>(n_hi);
    const double next = 0.5 * (lo + hi);
    if (next == t) break;
    t = next;
  }
  return hi - lo < kMinModeSeparation ? kNaN : t;
}

Detection detect_cells(const nd::NdArray<float>& image, const nd::NdArray<float>& region) {
  const std::size_t s = side_of(image, "detect_cells");
  check_mask(region, s, "detect_cells");
  Detection d;
  for (const float v : region.span()) d.stats.region_area += v != 0.0f;
  if (d.stats.region_area == 0) throw DataError("detect_cells: region is empty");
  d.low_confidence = d.stats.region_area < kMinConfidentArea;
  d.threshold = two_means_threshold(image.span());
  if (!std::isnan(d.threshold)) {
    std::vector<int> seen(s * s, 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < s * s; ++start) {
      if (seen[start] || !(image[start] < d.threshold)) continue;
      seen[start] = 1;
      stack.assign(1, start);
      std::size_t area = 0;
      double sx = 0, sy = 0;
      while (!stack.empty()) {
        const std::size_t p = stack.back();
        stack.pop_back();
        const std::size_t y = p / s, x = p % s;
        ++area;
        sx += static_cast<double>(x) + 0.5;
        sy += static_cast<double>(y) + 0.5;
        const auto visit = [&](std::size_t q) {
          if (!seen[q] && image[q] < d.threshold) {
            seen[q] = 1;
            stack.push_back(q);
          }
        };
        if (x > 0) visit(p - 1);
        if (x + 1 < s) visit(p + 1);
        if (y > 0) visit(p - s);
        if (y + 1 < s) visit(p + s);
      }
      if (area < kMinCellArea || area > kMaxCellArea) continue;
      DetectedCell c{sx / static_cast<double>(area), sy / static_cast<double>(area), area};
      const auto cx = static_cast<std::size_t>(c.cx), cy = static_cast<std::size_t>(c.cy);
      if (region[cy * s + cx] != 0.0f) d.cells.push_back(c);
    }
  }
  d.stats.count = d.cells.size();
  d.stats.density = static_cast<double>(d.stats.count) / d.stats.region_area;
  for (const auto& c : d.cells) d.stats.mean_size += static_cast<double>(c.area);
  if (!d.cells.empty()) d.stats.mean_size /= static_cast<double>(d.cells.size());
  return d;
}

double relative_error(double intact, double repaired, bool* degenerate) {
  if (degenerate) *degenerate = false;
  if (intact == 0.0 && repaired != 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;
  }
  return std::abs(repaired - intact) / std::max(intact, kRelativeEps);
}

StatError cellstat_error(const nd::NdArray<float>& intact, const nd::NdArray<float>& repaired,
                         const nd::NdArray<float>& mask) {
  const std::size_t s = side_of(intact, "cellstat_error");
  if (side_of(repaired, "cellstat_error") != s)
    throw ShapeError("cellstat_error", "image", "intact and repaired differ in size");
  check_mask(mask, s, "cellstat_error");
  nd::NdArray<float> hole({s, s});
  for (std::size_t i = 0; i < hole.size(); ++i) hole[i] = mask[i] == 0.0f ? 1.0f : 0.0f;
  const auto a = detect_cells(intact, hole), b = detect_cells(repaired, hole);
  StatError e;
  e.intact = a.stats;
  e.repaired = b.stats;
  e.low_confidence = a.low_confidence;
  e.density = relative_error(a.stats.density, b.stats.density, &e.density_degenerate);
  e.size = relative_error(a.stats.mean_size, b.stats.mean_size, &e.size_degenerate);
  return e;
}

Consistency classification_consistency(std::span<const double> intact_logits, std::span<const double> repaired_logits) {
  if (intact_logits.size() != repaired_logits.size() || intact_logits.size() < 2)
    throw ShapeError("classification_consistency", "class", "logit vectors must match and hold at least 2 classes");
  const auto top1 = [](std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  const std::size_t want = top1(intact_logits), first = top1(repaired_logits);
  std::size_t second = first == 0 ? 1 : 0;
  for (std::size_t k = 0; k < repaired_logits.size(); ++k)
    if (k != first && repaired_logits[k] > repaired_logits[second]) second = k;
  return {want == first, want == first || want == second};
}

std::size_t coverage_bin(double coverage) {
  if (!(coverage >= synth::kMinCoverage - 1e-12 && coverage <= synth::kMaxCoverage + 1e-12))
    throw DataError("coverage " + std::to_string(coverage) + " is outside [0.05, 0.5]");
  const auto b = static_cast<std::size_t>(std::floor((coverage - synth::kMinCoverage) / kBinWidth + 1e-9));
  return std::min(b, kBins - 1);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("spearman", "n", "sequences differ in length");
  if (x.size() < 2) return 0.0;
  const auto rx = ranks(x), ry = ranks(y);
  const double mean = 0.5 * static_cast<double>(x.size() + 1);
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

nd::NdArray<float> mean_fill(const nd::NdArray<float>& image, const nd::NdArray<float>& mask) {
  const std::size_t s = side_of(image, "mean_fill");
  check_mask(mask, s, "mean_fill");
  double sum = 0;
  std::size_t known = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] != 0.0f) {
      sum += image[i];
      ++known;
    }
  if (known == 0) throw DataError("mean_fill: mask has no known pixels");
  nd::NdArray<float> out = image;
  const auto fill = static_cast<float>(sum / static_cast<double>(known));
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] == 0.0f) out[i] = fill;
  return out;
}

double boundary_discontinuity(const nd::NdArray<float>& image, const nd::NdArray<float>& mask) {
  const std::size_t s = side_of(image, "boundary_discontinuity");
  check_mask(mask, s, "boundary_discontinuity");
  double sum = 0;
  std::size_t pairs = 0;
  const auto edge = [&](std::size_t p, std::size_t q) {
    if ((mask[p] == 0.0f) == (mask[q] == 0.0f)) return;
    const double d = static_cast<double>(image[p]) - image[q];
    sum += d * d;
    ++pairs;
  };
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      if (x + 1 < s) edge(y * s + x, y * s + x + 1);
      if (y + 1 < s) edge(y * s + x, (y + 1) * s + x);
    }
  if (pairs == 0) throw DataError("boundary_discontinuity: mask has no hole boundary");
  return sum / static_cast<double>(pairs);
}

void EvalConfig::validate() const {
  if (jump < 1) throw ConfigError("/jump", "must be at least 1");
  if (batch == 0) throw ConfigError("/batch", "must be positive");
}

nlohmann::json EvalConfig::to_json() const { return {{"n", n}, {"jump", jump}, {"seed", seed}, {"batch", batch}}; }

EvalConfig EvalConfig::from_json(const nlohmann::json& j, const std::string& pointer_prefix) {
  if (!j.is_object()) throw ConfigError(pointer_prefix.empty() ? "/" : pointer_prefix, "must be a JSON object");
  EvalConfig c;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = pointer_prefix + "/" + key;
    try {
      if (key == "n") c.n = value.get<std::size_t>();
      else if (key == "jump") c.jump = value.get<int>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "batch") c.batch = value.get<std::size_t>();
      else throw ConfigError(ptr, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ptr, e.what());
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(pointer_prefix + e.pointer(), e.detail());
  }
  return c;
}

nlohmann::json Report::to_json() const {
  nlohmann::json bins_json = nlohmann::json::array();
  for (const auto& b : bins)
    bins_json.push_back({{"lo", b.lo},
                         {"hi", b.hi},
                         {"n", b.n},
                         {"k1_rate", b.k1_rate},
                         {"k2_rate", b.k2_rate},
                         {"density_err_median", b.density_err_median},
                         {"size_err_median", b.size_err_median},
                         {"baseline_density_err_median", b.baseline_density_err_median},
                         {"baseline_size_err_median", b.baseline_size_err_median}});
  nlohmann::json patches_json = nlohmann::json::array();
  for (const auto& p : patches)
    patches_json.push_back({{"index", p.index},
                            {"sample", p.sample},
                            {"label", p.label},
                            {"target_coverage", p.target_coverage},
                            {"coverage", p.coverage},
                            {"mask_seed", p.mask_seed},
                            {"bin", p.bin},
                            {"k1", p.consistency.k1},
                            {"k2", p.consistency.k2},
                            {"repaired", error_json(p.repaired)},
                            {"baseline", error_json(p.baseline)}});
  const auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"config", config.to_json()},
          {"n", patches.size()},
          {"k1_rate", k1_rate},
          {"k2_rate", k2_rate},
          {"density_err_median", density_err_median},
          {"size_err_median", size_err_median},
          {"baseline_density_err_median", baseline_density_err_median},
          {"baseline_size_err_median", baseline_size_err_median},
          {"spearman_k1", spearman_k1},
          {"fcd_repaired_vs_intact", opt(fcd_repaired_vs_intact)},
          {"fcd_baseline_vs_intact", opt(fcd_baseline_vs_intact)},
          {"bins", bins_json},
          {"patches", patches_json}};
}

Report run_evaluation(const denoiser::Checkpoint& model, const metrics::Embedder& embedder,
                      const nd::NdArray<float>& pool, std::span<const int> labels, const EvalConfig& config,
                      const Progress& progress) {
  config.validate();
  check_pool(pool, model.config);
  if (!labels.empty() && labels.size() != pool.dim(0))
    throw DataError("evaluate: " + std::to_string(labels.size()) + " labels for " + std::to_string(pool.dim(0)) +
                    " images");
  if (embedder.config.input_size != model.config.input_size)
    throw DataError("evaluate: embedder input size " + std::to_string(embedder.config.input_size) +
                    " does not match the denoiser input size " + std::to_string(model.config.input_size));

  Report report;
  report.config = config;
  for (std::size_t b = 0; b < kBins; ++b) {
    BinSummary bin;
    bin.lo = synth::kMinCoverage + kBinWidth * static_cast<double>(b);
    bin.hi = bin.lo + kBinWidth;
    bin.k1_rate = bin.k2_rate = bin.density_err_median = bin.size_err_median = kNaN;
    bin.baseline_density_err_median = bin.baseline_size_err_median = kNaN;
    report.bins.push_back(bin);
  }
  const std::size_t n = config.n;
  if (n == 0) {
    report.k1_rate = report.k2_rate = report.density_err_median = report.size_err_median = kNaN;
    report.baseline_density_err_median = report.baseline_size_err_median = kNaN;
    return report;
  }

  const Rng root = Rng(config.seed).fork("evaluate");
  const auto plans = plan_patches(n, pool.dim(0), root);
  const auto batch = gather(pool, plans);
  const auto repaired = repaint_all(model, batch, config.jump, root.fork("repaint"), config.seed, config.batch, progress);
  const std::size_t s = pool.dim(2), per = s * s;
  auto baseline = nd::NdArray<float>::uninitialized(batch.intact.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto filled = mean_fill(plane(batch.intact, i), plane(batch.masks, i));
    std::copy_n(filled.data(), per, baseline.data() + i * per);
  }

  const auto logits_intact = metrics::classify(embedder, batch.intact);
  const auto logits_repaired = metrics::classify(embedder, repaired);
  const std::size_t k = embedder.config.classes;

  report.patches.resize(n);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t ki = 0; ki < static_cast<std::ptrdiff_t>(n); ++ki) {
    const auto i = static_cast<std::size_t>(ki);
    try {
      auto& rec = report.patches[i];
      const auto mask = plane(batch.masks, i);
      rec.index = i;
      rec.sample = plans[i].sample;
      rec.label = labels.empty() ? -1 : labels[plans[i].sample];
      rec.target_coverage = plans[i].target;
      rec.mask_seed = plans[i].mask_seed;
      rec.coverage = static_cast<double>(std::count(mask.span().begin(), mask.span().end(), 0.0f)) /
                     static_cast<double>(per);
      rec.bin = coverage_bin(rec.coverage);
      const auto intact = plane(batch.intact, i);
      rec.repaired = cellstat_error(intact, plane(repaired, i), mask);
      rec.baseline = cellstat_error(intact, plane(baseline, i), mask);
      rec.consistency = classification_consistency({logits_intact.data() + i * k, k}, {logits_repaired.data() + i * k, k});
    } catch (const std::exception& e) {
#pragma omp critical(repaintlab_eval_error)
      if (!failure)
        failure = std::make_exception_ptr(Error("evaluation failed on patch " + std::to_string(i) + " (seed " +
                                                std::to_string(config.seed) + "): " + e.what()));
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<std::vector<double>> dens(kBins), size(kBins), bdens(kBins), bsize(kBins);
  std::vector<std::size_t> k1(kBins, 0), k2(kBins, 0);
  std::vector<double> all_dens, all_size, all_bdens, all_bsize;
  std::size_t all_k1 = 0, all_k2 = 0;
  for (const auto& p : report.patches) {
    dens[p.bin].push_back(p.repaired.density);
    size[p.bin].push_back(p.repaired.size);
    bdens[p.bin].push_back(p.baseline.density);
    bsize[p.bin].push_back(p.baseline.size);
    k1[p.bin] += p.consistency.k1;
    k2[p.bin] += p.consistency.k2;
    all_dens.push_back(p.repaired.density);
    all_size.push_back(p.repaired.size);
    all_bdens.push_back(p.baseline.density);
    all_bsize.push_back(p.baseline.size);
    all_k1 += p.consistency.k1;
    all_k2 += p.consistency.k2;
  }
  std::vector<double> mids, k1_rates;
  for (std::size_t b = 0; b < kBins; ++b) {
    auto& bin = report.bins[b];
    bin.n = dens[b].size();
    if (bin.n == 0) continue;
    bin.k1_rate = static_cast<double>(k1[b]) / static_cast<double>(bin.n);
    bin.k2_rate = static_cast<double>(k2[b]) / static_cast<double>(bin.n);
    bin.density_err_median = median_or_nan(dens[b]);
    bin.size_err_median = median_or_nan(size[b]);
    bin.baseline_density_err_median = median_or_nan(bdens[b]);
    bin.baseline_size_err_median = median_or_nan(bsize[b]);
    mids.push_back(0.5 * (bin.lo + bin.hi));
    k1_rates.push_back(bin.k1_rate);
  }
  report.k1_rate = static_cast<double>(all_k1) / static_cast<double>(n);
  report.k2_rate = static_cast<double>(all_k2) / static_cast<double>(n);
  report.density_err_median = median_or_nan(all_dens);
  report.size_err_median = median_or_nan(all_size);
  report.baseline_density_err_median = median_or_nan(all_bdens);
  report.baseline_size_err_median = median_or_nan(all_bsize);
  report.spearman_k1 = spearman(mids, k1_rates);

  if (n >= metrics::stats_floor(embedder)) {
    const auto ref = metrics::embed_stats(embedder, batch.intact);
    report.fcd_repaired_vs_intact = metrics::frechet_distance(metrics::embed_stats(embedder, repaired), ref);
    report.fcd_baseline_vs_intact = metrics::frechet_distance(metrics::embed_stats(embedder, baseline), ref);
  }
  return report;
}

JumpComparison compare_jumps(const denoiser::Checkpoint& model, const nd::NdArray<float>& pool, std::size_t n,
                             const std::vector<int>& jumps, std::uint64_t seed, std::size_t batch) {
  check_pool(pool, model.config);
  if (n == 0) throw DataError("compare_jumps: need at least one patch");
  if (batch == 0) throw Error("compare_jumps: batch must be positive");
  const Rng root = Rng(seed).fork("compare-jumps");
  const auto plans = plan_patches(n, pool.dim(0), root);
  const auto b = gather(pool, plans);
  JumpComparison out;
  out.jumps = jumps;
  out.n = n;
  for (const int j : jumps) {
    if (j < 1) throw ConfigError("/jump", "must be at least 1");
    const auto r = repaint_all(model, b, j, root.fork("repaint"), seed, batch, {});
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += boundary_discontinuity(plane(r, i), plane(b.masks, i));
    out.mean_discontinuity.push_back(total / static_cast<double>(n));
  }
  return out;
}

}  // namespace repaintlab::eval
