#include "repaintlab/metrics/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "repaintlab/error.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::metrics {

namespace {

constexpr double kPi = 3.14159265358979323846;

void check_images(const nd::NdArray<float>& images, const char* op) {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != images.dim(3))
    throw ShapeError(op, "image", "need [N, 1, S, S], got " + nd::shape_str(images.shape()));
}

bool is_fraction(Perturbation k) { return k == Perturbation::salt_pepper || k == Perturbation::dataset_mix; }

std::vector<double> gaussian_kernel(double sd) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sd)));
  std::vector<double> k(2 * static_cast<std::size_t>(radius) + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sd * sd));
  for (auto& v : k) v /= total;
  return k;
}

/// Mirror index into [0, n) without repeating the edge sample.
std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  const auto m = static_cast<std::ptrdiff_t>(n);
  if (m == 1) return 0;
  const std::ptrdiff_t period = 2 * (m - 1);
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < m ? i : period - i);
}

void blur_one(float* img, std::size_t s, const std::vector<double>& k) {
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<double> tmp(s * s);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      double acc = 0;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        acc += k[static_cast<std::size_t>(d + r)] * img[y * s + reflect(static_cast<std::ptrdiff_t>(x) + d, s)];
      tmp[y * s + x] = acc;
    }
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      double acc = 0;
      for (std::ptrdiff_t d = -r; d <= r; ++d)
        acc += k[static_cast<std::size_t>(d + r)] * tmp[reflect(static_cast<std::ptrdiff_t>(y) + d, s) * s + x];
      img[y * s + x] = static_cast<float>(acc);
    }
}

void draw_alien(float* img, std::size_t s, Rng rng) {
  const double bg = rng.uniform(-1.0, 1.0);
  std::fill(img, img + s * s, static_cast<float>(bg));
  const auto ds = static_cast<double>(s);
  if (rng.uniform() < 0.5) {
    const double angle = rng.uniform(0.0, kPi);
    const double period = rng.uniform(4.0, 16.0);
    const double amp = rng.uniform(0.4, 1.0);
    const double c = std::cos(angle), sn = std::sin(angle);
    for (std::size_t y = 0; y < s; ++y)
      for (std::size_t x = 0; x < s; ++x) {
        const double u = (static_cast<double>(x) * c + static_cast<double>(y) * sn) / period;
        img[y * s + x] = static_cast<float>(u - std::floor(u) < 0.5 ? amp : -amp);
      }
  }
  const auto rects = rng.uniform_int(1, 4);
  for (std::int64_t r = 0; r < rects; ++r) {
    const double w = rng.uniform(0.15, 0.6) * ds, h = rng.uniform(0.15, 0.6) * ds;
    const double x0 = rng.uniform(0.0, ds - w), y0 = rng.uniform(0.0, ds - h);
    const auto v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto y = static_cast<std::size_t>(y0); y < std::min(s, static_cast<std::size_t>(y0 + h)); ++y)
      for (auto x = static_cast<std::size_t>(x0); x < std::min(s, static_cast<std::size_t>(x0 + w)); ++x)
        img[y * s + x] = v;
  }
}

}  // namespace

std::string to_string(Perturbation kind) {
  switch (kind) {
    case Perturbation::gaussian_noise: return "gaussian_noise";
    case Perturbation::gaussian_blur: return "gaussian_blur";
    case Perturbation::salt_pepper: return "salt_pepper";
    case Perturbation::dataset_mix: return "dataset_mix";
  }
  return "?";
}

Perturbation parse_perturbation(const std::string& name) {
  for (const auto k : all_perturbations())
    if (to_string(k) == name) return k;
  throw ConfigError("/kind", "unknown perturbation '" + name +
                                 "' (expected gaussian_noise, gaussian_blur, salt_pepper or dataset_mix)");
}

const std::vector<Perturbation>& all_perturbations() {
  static const std::vector<Perturbation> kinds{Perturbation::gaussian_noise, Perturbation::gaussian_blur,
                                               Perturbation::salt_pepper, Perturbation::dataset_mix};
  return kinds;
}

void PerturbationSpec::validate() const {
  if (levels.size() < 4) throw ConfigError("/levels", "need at least 4 levels, got " + std::to_string(levels.size()));
  if (levels.front() != 0.0) throw ConfigError("/levels/0", "the first level must be 0 (identity)");
  for (std::size_t i = 1; i < levels.size(); ++i)
    if (!(levels[i] > levels[i - 1]))
      throw ConfigError("/levels/" + std::to_string(i), "levels must be strictly increasing");
  if (is_fraction(kind) && levels.back() > 1.0)
    throw ConfigError("/levels/" + std::to_string(levels.size() - 1), "fractions cannot exceed 1");
}

PerturbationSpec default_spec(Perturbation kind) {
  switch (kind) {
    case Perturbation::gaussian_noise: return {kind, {0.0, 0.05, 0.1, 0.2, 0.4}};
    case Perturbation::gaussian_blur: return {kind, {0.0, 0.5, 1.0, 1.5, 2.5}};
    case Perturbation::salt_pepper: return {kind, {0.0, 0.01, 0.03, 0.1, 0.3}};
    case Perturbation::dataset_mix: return {kind, {0.0, 0.25, 0.5, 0.75, 1.0}};
  }
  return {};
}

nd::NdArray<float> alien_images(std::size_t n, std::size_t size, std::uint64_t seed) {
  auto out = nd::NdArray<float>::uninitialized({n, 1, size, size});
  const Rng root = Rng(seed).fork("alien");
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    draw_alien(out.data() + static_cast<std::size_t>(i) * size * size, size, root.fork(static_cast<std::uint64_t>(i)));
  return out;
}

nd::NdArray<float> noise_images(std::size_t n, std::size_t size, std::uint64_t seed) {
  auto out = nd::NdArray<float>::uninitialized({n, 1, size, size});
  Rng rng = Rng(seed).fork("noise-images");
  for (auto& v : out.span()) v = static_cast<float>(std::clamp(rng.normal(), -1.0, 1.0));
  return out;
}

nd::NdArray<float> perturb(const nd::NdArray<float>& images, Perturbation kind, double level, std::uint64_t seed,
                           const nd::NdArray<float>* aliens) {
  check_images(images, "perturb");
  if (!(level >= 0) || (is_fraction(kind) && level > 1.0))
    throw ConfigError("/levels", "level " + std::to_string(level) + " is out of range for " + to_string(kind));
  nd::NdArray<float> out = images;
  if (level == 0.0) return out;
  const std::size_t n = images.dim(0), s = images.dim(2), per = s * s;
  const Rng root(seed);
  switch (kind) {
    case Perturbation::gaussian_noise: {
      Rng rng = root.fork("perturb/noise");
      for (auto& v : out.span()) v = static_cast<float>(std::clamp(v + level * rng.normal(), -1.0, 1.0));
      break;
    }
    case Perturbation::gaussian_blur: {
      const auto k = gaussian_kernel(level);
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
        blur_one(out.data() + static_cast<std::size_t>(i) * per, s, k);
      break;
    }
    case Perturbation::salt_pepper: {
      Rng rng = root.fork("perturb/salt_pepper");
      for (auto& v : out.span()) {
        const double u = rng.uniform();
        const bool salt = rng.uniform() < 0.5;
        if (u < level) v = salt ? 1.0f : -1.0f;
      }
      break;
    }
    case Perturbation::dataset_mix: {
      nd::NdArray<float> generated;
      if (!aliens) {
        generated = alien_images(n, s, seed);
        aliens = &generated;
      }
      check_images(*aliens, "perturb");
      if (aliens->dim(2) != s || aliens->dim(0) < n)
        throw DataError("perturb: need at least " + std::to_string(n) + " alien images of size " + std::to_string(s) +
                        ", got " + nd::shape_str(aliens->shape()));
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), root.fork("perturb/mix").engine());
      const auto k = static_cast<std::size_t>(std::llround(level * static_cast<double>(n)));
      for (std::size_t i = 0; i < k; ++i) std::copy_n(aliens->data() + i * per, per, out.data() + order[i] * per);
      break;
    }
  }
  return out;
}

std::vector<BatteryPoint> perturbation_battery(const Embedder& model, const nd::NdArray<float>& real,
                                               const PerturbationSpec& spec, std::uint64_t seed,
                                               const nd::NdArray<float>* aliens) {
  spec.validate();
  const auto base = embed_stats(model, real);
  nd::NdArray<float> generated;
  if (spec.kind == Perturbation::dataset_mix && !aliens) {
    generated = alien_images(real.dim(0), real.dim(2), seed);
    aliens = &generated;
  }
  std::vector<BatteryPoint> curve;
  for (const double level : spec.levels)
    curve.push_back({level, frechet_distance(base, embed_stats(model, perturb(real, spec.kind, level, seed, aliens)))});
  return curve;
}

bool strictly_increasing(const std::vector<BatteryPoint>& curve) {
  for (std::size_t i = 1; i < curve.size(); ++i)
    if (!(curve[i].fcd > curve[i - 1].fcd)) return false;
  return true;
}

nlohmann::json to_json(Perturbation kind, const std::vector<BatteryPoint>& curve) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : curve) points.push_back({{"level", p.level}, {"fcd", p.fcd}});
  return {{"kind", to_string(kind)}, {"curve", points}, {"strictly_increasing", strictly_increasing(curve)}};
}

}  // namespace repaintlab::metrics
