#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "repaintlab/error.hpp"
#include "repaintlab/evalharness/evaluate.hpp"
#include "repaintlab/rng.hpp"

using namespace repaintlab;
using namespace repaintlab::eval;

namespace {

nd::NdArray<float> full_region(std::size_t s) { return nd::NdArray<float>({s, s}, 1.0f); }

/// Discs of radius r on a jittered lattice; background 0.5, cells -0.6, light grain.
nd::NdArray<float> disc_patch(std::size_t count, double r, std::uint64_t seed) {
  const std::size_t s = 64;
  nd::NdArray<float> img({s, s}, 0.5f);
  Rng rng(seed);
  std::vector<std::size_t> slots(81);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng.engine());
  for (std::size_t c = 0; c < count; ++c) {
    const double cx = 4.0 + 7.0 * static_cast<double>(slots[c] % 9) + rng.uniform(-0.25, 0.25);
    const double cy = 4.0 + 7.0 * static_cast<double>(slots[c] / 9) + rng.uniform(-0.25, 0.25);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x)
        if (std::hypot(static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy) <= r) img[y * s + x] = -0.6f;
  }
  for (auto& v : img.span()) v += static_cast<float>(0.02 * rng.normal());
  return img;
}

synth::TextureSpec round_cells(double density, double radius) {
  synth::TextureSpec s;
  s.density = {density};
  s.radius_mean = {radius};
  s.radius_sd = 0;
  s.eccentricity_max = 0;
  s.max_overlap = 0;
  s.density_jitter = 0;
  s.boundary_jitter = 0;
  return s;
}

denoiser::Checkpoint small_model(std::uint64_t seed) {
  denoiser::DenoiserConfig c;
  c.input_size = 32;
  c.base_channels = 4;
  c.channel_mult = {1, 2};
  c.res_blocks_encoder = {1, 1};
  c.attention_resolutions = {16};
  c.time_embed_dim = 8;
  c.norm_groups = 2;
  c.timesteps = 6;
  denoiser::Checkpoint m{c, denoiser::build<float>(c, seed)};
  testing::scramble(m.params, seed + 1, 0.05);
  return m;
}

metrics::Embedder small_embedder(std::uint64_t seed) {
  metrics::Embedder e;
  e.config.input_size = 32;
  e.config.stages = {4, 8};
  e.config.classes = 3;
  e.config.norm_groups = 2;
  e.params = metrics::build_embedder<float>(e.config, seed);
  return e;
}

nd::NdArray<float> texture_pool(std::size_t n, std::size_t s) {
  nd::NdArray<float> pool({n, 1, s, s});
  const auto spec = round_cells(0.02, 2.5);
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = synth::generate_patch(spec, s, 100 + i);
    std::copy_n(p.pixels.data(), s * s, pool.data() + i * s * s);
  }
  return pool;
}

}  // namespace

TEST_CASE("blank patch has no cells") {
  const auto p = synth::generate_patch(round_cells(0.0, 3.0), 64, 1);
  const auto d = detect_cells(p.pixels, full_region(64));
  CHECK(d.stats.count == 0);
  CHECK(d.stats.density == 0.0);
  CHECK(std::isnan(d.threshold));
}

TEST_CASE("fifty separated discs are counted") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto d = detect_cells(disc_patch(50, 3.0, seed), full_region(64));
    CHECK(d.stats.count >= 48);
    CHECK(d.stats.count <= 52);
    CHECK(d.stats.region_area == 4096);
  }
}

TEST_CASE("generator patches: counts and sizes follow ground truth") {
  // Sparse enough that touching cells, which the detector merges, are rare.
  for (const double radius : {3.0, 4.0}) {
    double detected = 0, truth_total = 0, detected_area = 0, truth_area = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const auto spec = round_cells(20.0 / 4096.0 * 9.0 / (radius * radius), radius);
      const auto p = synth::generate_patch(spec, 64, seed);
      const auto truth = p.truth.stats(full_region(64));
      const auto d = detect_cells(p.pixels, full_region(64));
      CAPTURE(seed);
      CAPTURE(radius);
      detected += static_cast<double>(d.stats.count);
      truth_total += static_cast<double>(truth.count);
      detected_area += d.stats.mean_size * static_cast<double>(d.stats.count);
      truth_area += truth.mean_size * static_cast<double>(truth.count);
    }
    MESSAGE("radius " << radius << ": detected " << detected << " of " << truth_total);
    CHECK(std::abs(detected - truth_total) / truth_total < 0.05);
    // pooled over all cells of the 20 patches; a merged pair inflates one patch's mean
    const double size_err = std::abs(detected_area / detected - truth_area / truth_total) / (truth_area / truth_total);
    MESSAGE("radius " << radius << ": mean size error " << size_err);
    CHECK(size_err < 0.2);
  }
}

TEST_CASE("cells are assigned to the region by centroid") {
  const auto img = disc_patch(50, 3.0, 3);
  nd::NdArray<float> left({64, 64});
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 32; ++x) left[y * 64 + x] = 1.0f;
  const auto all = detect_cells(img, full_region(64)), half = detect_cells(img, left);
  std::size_t expect = 0;
  for (const auto& c : all.cells) expect += c.cx < 32.0;
  CHECK(half.stats.count == expect);
  CHECK(half.stats.region_area == 2048);
  CHECK(half.stats.density == doctest::Approx(static_cast<double>(expect) / 2048.0));
}

TEST_CASE("detector is deterministic and validates its inputs") {
  const auto img = disc_patch(30, 3.0, 4);
  const auto a = detect_cells(img, full_region(64)), b = detect_cells(img, full_region(64));
  CHECK(a.stats.count == b.stats.count);
  CHECK(a.stats.mean_size == b.stats.mean_size);
  CHECK_THROWS_AS(detect_cells(img, nd::NdArray<float>({64, 64})), DataError);
  CHECK_THROWS_AS(detect_cells(img, full_region(32)), ShapeError);
  nd::NdArray<float> tiny({64, 64});
  for (std::size_t i = 0; i < 10; ++i) tiny[i] = 1.0f;
  CHECK(detect_cells(img, tiny).low_confidence);
  CHECK_FALSE(a.low_confidence);
}

TEST_CASE("component area bounds") {
  nd::NdArray<float> img({64, 64}, 0.5f);
  img[0] = img[1] = img[2] = -0.6f;                              // 3 px, too small
  for (std::size_t i : {200u, 201u, 264u, 265u}) img[i] = -0.6f;   // 2x2 block, counted
  for (std::size_t y = 30; y < 60; ++y)
    for (std::size_t x = 30; x < 44; ++x) img[y * 64 + x] = -0.6f;   // 420 px, too large
  const auto d = detect_cells(img, full_region(64));
  REQUIRE(d.stats.count == 1);
  CHECK(d.cells[0].area == 4);
  CHECK(d.cells[0].cx == 9.0);
  CHECK(d.cells[0].cy == 4.0);
}

TEST_CASE("cell statistic errors") {
  const auto intact = disc_patch(50, 3.0, 5);
  nd::NdArray<float> mask({64, 64}, 1.0f);
  // hole edges sit on lattice gaps so no disc is cut
  for (std::size_t y = 7; y < 35; ++y)
    for (std::size_t x = 7; x < 35; ++x) mask[y * 64 + x] = 0.0f;
  const auto same = cellstat_error(intact, intact, mask);
  CHECK(same.density == 0.0);
  CHECK(same.size == 0.0);
  nd::NdArray<float> blanked = intact;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] == 0.0f) blanked[i] = 0.5f;
  const auto blank = cellstat_error(intact, blanked, mask);
  CHECK(blank.density == 1.0);
  CHECK_FALSE(blank.density_degenerate);
  const auto backwards = cellstat_error(blanked, intact, mask);
  CHECK(backwards.density == 1.0);
  CHECK(backwards.density_degenerate);
  bool flag = false;
  CHECK(relative_error(2.0, 3.0, &flag) == 0.5);
  CHECK_FALSE(flag);
  CHECK(relative_error(0.0, 0.0, &flag) == 0.0);
}

TEST_CASE("classification consistency") {
  const std::vector<double> a{0.1, 2.0, -1.0, 0.5};
  auto c = classification_consistency(a, a);
  CHECK(c.k1);
  CHECK(c.k2);
  c = classification_consistency(a, std::vector<double>{3.0, 2.5, 0.0, 0.0});
  CHECK_FALSE(c.k1);
  CHECK(c.k2);
  c = classification_consistency(a, std::vector<double>{3.0, 0.0, 2.5, 0.0});
  CHECK_FALSE(c.k2);
  Rng rng(6);
  bool implied = true;
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> x(5), y(5);
    for (auto& v : x) v = rng.normal();
    for (auto& v : y) v = rng.normal();
    const auto r = classification_consistency(x, y);
    implied = implied && (!r.k1 || r.k2);
  }
  CHECK(implied);
}

TEST_CASE("coverage bins partition the range") {
  CHECK(coverage_bin(0.05) == 0);
  CHECK(coverage_bin(0.0999) == 0);
  CHECK(coverage_bin(0.10) == 1);
  CHECK(coverage_bin(0.2250) == 3);
  CHECK(coverage_bin(0.4999) == 8);
  CHECK(coverage_bin(0.50) == 8);
  CHECK_THROWS_AS(coverage_bin(0.04), DataError);
  CHECK_THROWS_AS(coverage_bin(0.51), DataError);
  for (int k = 500; k <= 5000; ++k) CHECK(coverage_bin(k / 10000.0) < kBins);
}

TEST_CASE("spearman rank correlation") {
  const std::vector<double> x{1, 2, 3, 4, 5};
  CHECK(spearman(x, std::vector<double>{10, 20, 30, 40, 50}) == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman(x, std::vector<double>{1, 1, 1, 1, 1}) == 0.0);
  // ties get average ranks: y ranks (1.5, 1.5, 3, 4, 5)
  CHECK(spearman(x, std::vector<double>{0, 0, 1, 2, 3}) == doctest::Approx(0.9746794344808964));
}

TEST_CASE("mean fill and boundary discontinuity") {
  nd::NdArray<float> img({4, 4});
  nd::NdArray<float> mask({4, 4}, 1.0f);
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
  mask[5] = 0.0f;   // (1,1)
  const auto filled = mean_fill(img, mask);
  CHECK(filled[5] == doctest::Approx((120.0 - 5.0) / 15.0));
  CHECK(filled[0] == 0.0f);
  // neighbours of pixel 5: 4, 6, 1, 9
  CHECK(boundary_discontinuity(img, mask) == doctest::Approx((1.0 + 1.0 + 16.0 + 16.0) / 4.0));
  CHECK_THROWS_AS(boundary_discontinuity(img, nd::NdArray<float>({4, 4}, 1.0f)), DataError);
}

TEST_CASE("evaluation with n = 0 gives an empty report") {
  const auto r = run_evaluation(small_model(1), small_embedder(2), texture_pool(4, 32), {}, EvalConfig{0, 2, 0, 4});
  CHECK(r.patches.empty());
  CHECK(r.bins.size() == kBins);
  CHECK_FALSE(r.fcd_repaired_vs_intact.has_value());
  CHECK(r.to_json()["n"] == 0);
}

TEST_CASE("evaluation is reproducible and internally consistent") {
  const auto model = small_model(3);
  const auto emb = small_embedder(4);
  const auto pool = texture_pool(20, 32);
  std::vector<int> labels(20);
  for (std::size_t i = 0; i < 20; ++i) labels[i] = static_cast<int>(i % 3);
  const EvalConfig cfg{64, 2, 9, 16};
  std::size_t last_done = 0;
  const auto a = run_evaluation(model, emb, pool, labels, cfg, [&](std::size_t done, std::size_t total) {
    CHECK(total == 64);
    last_done = done;
  });
  CHECK(last_done == 64);
  const auto b = run_evaluation(model, emb, pool, labels, cfg);
  CHECK(a.to_json().dump() == b.to_json().dump());
  std::size_t total = 0;
  for (std::size_t k = 0; k < kBins; ++k) {
    total += a.bins[k].n;
    if (a.bins[k].n) CHECK(a.bins[k].k2_rate >= a.bins[k].k1_rate);
  }
  CHECK(total == 64);
  for (const auto& p : a.patches) {
    CHECK(p.coverage >= 0.05);
    CHECK(p.coverage <= 0.5);
    CHECK(p.bin == coverage_bin(p.coverage));
    CHECK((!p.consistency.k1 || p.consistency.k2));
    CHECK(p.label == labels[p.sample]);
  }
  REQUIRE(a.fcd_repaired_vs_intact.has_value());
  REQUIRE(a.fcd_baseline_vs_intact.has_value());
  const auto other = run_evaluation(model, emb, pool, labels, EvalConfig{64, 2, 10, 16});
  CHECK(other.to_json().dump() != a.to_json().dump());
}

TEST_CASE("evaluation rejects mismatched inputs") {
  const auto model = small_model(3);
  CHECK_THROWS_AS(run_evaluation(model, small_embedder(4), texture_pool(3, 64), {}, EvalConfig{}), ShapeError);
  const std::vector<int> labels{0, 1};
  CHECK_THROWS_AS(run_evaluation(model, small_embedder(4), texture_pool(3, 32), labels, EvalConfig{}), DataError);
  CHECK_THROWS_AS(EvalConfig::from_json({{"jump", 0}}), ConfigError);
  CHECK_THROWS_AS(EvalConfig::from_json({{"n", 1}, {"jumps", 2}}), ConfigError);
  EvalConfig c;
  c.n = 17;
  CHECK(EvalConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("jump comparison reuses the same patches and masks") {
  const auto model = small_model(5);
  const auto pool = texture_pool(6, 32);
  const auto a = compare_jumps(model, pool, 6, {1, 3}, 7, 4);
  const auto b = compare_jumps(model, pool, 6, {1}, 7, 2);
  REQUIRE(a.mean_discontinuity.size() == 2);
  CHECK(a.mean_discontinuity[0] == b.mean_discontinuity[0]);
  CHECK(a.mean_discontinuity[0] >= 0.0);
}
