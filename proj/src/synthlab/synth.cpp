#include "repaintlab/synthlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numbers>

#include "repaintlab/error.hpp"
#include "repaintlab/io/io.hpp"

namespace repaintlab::synth {

namespace {

constexpr int kSuper = 4;            // subsamples per axis for anti-aliasing
constexpr int kPlacementRetries = 100;

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", i);
  return buf;
}

template <typename V>
V get_field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(where + "/" + key + ": " + e.what());
  }
}

/// Equivalent circle radius used for the overlap test.
double equivalent_radius(const CellRecord& c) { return std::sqrt(c.a * c.b); }

}  // namespace

std::size_t TextureSpec::layer_at(double y_fraction) const {
  std::size_t l = 0;
  while (l < boundaries.size() && y_fraction >= boundaries[l]) ++l;
  return l;
}

void TextureSpec::validate() const {
  if (density.empty()) throw ConfigError("/density", "a texture needs at least one layer");
  if (boundaries.size() + 1 != density.size())
    throw ConfigError("/boundaries", "need one boundary fewer than layers");
  if (radius_mean.size() != density.size()) throw ConfigError("/radius_mean", "need one radius per layer");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    const double lo = i == 0 ? 0.0 : boundaries[i - 1];
    if (!(boundaries[i] > lo && boundaries[i] < 1.0))
      throw ConfigError("/boundaries/" + std::to_string(i), "boundaries must increase strictly inside (0, 1)");
  }
  for (std::size_t i = 0; i < density.size(); ++i) {
    if (!(density[i] >= 0)) throw ConfigError("/density/" + std::to_string(i), "density must be >= 0");
    if (!(radius_mean[i] > 0)) throw ConfigError("/radius_mean/" + std::to_string(i), "radius must be > 0");
  }
  if (!(radius_sd >= 0)) throw ConfigError("/radius_sd", "must be >= 0");
  if (!(eccentricity_min >= 0 && eccentricity_min <= eccentricity_max && eccentricity_max < 1))
    throw ConfigError("/eccentricity_max", "need 0 <= min <= max < 1");
  if (!(columnarity >= 0 && columnarity <= 1)) throw ConfigError("/columnarity", "must lie in [0, 1]");
  if (!(column_period > 0)) throw ConfigError("/column_period", "must be positive");
  if (!(max_overlap >= 0 && max_overlap <= 1)) throw ConfigError("/max_overlap", "must lie in [0, 1]");
  if (!(grain_sd >= 0)) throw ConfigError("/grain_sd", "must be >= 0");
  if (!(density_jitter >= 0 && density_jitter < 1)) throw ConfigError("/density_jitter", "must lie in [0, 1)");
  if (!(boundary_jitter >= 0 && boundary_jitter < 0.5)) throw ConfigError("/boundary_jitter", "must lie in [0, 0.5)");
}

nlohmann::json TextureSpec::to_json() const {
  return {{"class_id", class_id},
          {"name", name},
          {"boundaries", boundaries},
          {"density", density},
          {"radius_mean", radius_mean},
          {"radius_sd", radius_sd},
          {"eccentricity_min", eccentricity_min},
          {"eccentricity_max", eccentricity_max},
          {"columnarity", columnarity},
          {"column_period", column_period},
          {"background", background},
          {"cell_intensity", cell_intensity},
          {"cell_intensity_sd", cell_intensity_sd},
          {"max_overlap", max_overlap},
          {"grain_sd", grain_sd},
          {"density_jitter", density_jitter},
          {"boundary_jitter", boundary_jitter}};
}

TextureSpec TextureSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("", "texture spec must be an object");
  TextureSpec s;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = "/" + key;
    try {
      if (key == "class_id") s.class_id = value.get<int>();
      else if (key == "name") s.name = value.get<std::string>();
      else if (key == "boundaries") s.boundaries = value.get<std::vector<double>>();
      else if (key == "density") s.density = value.get<std::vector<double>>();
      else if (key == "radius_mean") s.radius_mean = value.get<std::vector<double>>();
      else if (key == "radius_sd") s.radius_sd = value.get<double>();
      else if (key == "eccentricity_min") s.eccentricity_min = value.get<double>();
      else if (key == "eccentricity_max") s.eccentricity_max = value.get<double>();
      else if (key == "columnarity") s.columnarity = value.get<double>();
      else if (key == "column_period") s.column_period = value.get<double>();
      else if (key == "background") s.background = value.get<double>();
      else if (key == "cell_intensity") s.cell_intensity = value.get<double>();
      else if (key == "cell_intensity_sd") s.cell_intensity_sd = value.get<double>();
      else if (key == "max_overlap") s.max_overlap = value.get<double>();
      else if (key == "grain_sd") s.grain_sd = value.get<double>();
      else if (key == "density_jitter") s.density_jitter = value.get<double>();
      else if (key == "boundary_jitter") s.boundary_jitter = value.get<double>();
      else throw ConfigError(ptr, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ptr, e.what());
    }
  }
  s.validate();
  return s;
}

double CellRecord::area() const noexcept { return std::numbers::pi * a * b; }

nlohmann::json CellRecord::to_json() const {
  return {{"x", x}, {"y", y}, {"a", a}, {"b", b}, {"theta", theta}, {"layer", layer}};
}

CellRecord CellRecord::from_json(const nlohmann::json& j) {
  CellRecord c;
  c.x = get_field<double>(j, "x", "cell");
  c.y = get_field<double>(j, "y", "cell");
  c.a = get_field<double>(j, "a", "cell");
  c.b = get_field<double>(j, "b", "cell");
  c.theta = get_field<double>(j, "theta", "cell");
  c.layer = get_field<std::size_t>(j, "layer", "cell");
  return c;
}

CellStats GroundTruth::stats(const nd::NdArray<float>& region) const {
  if (region.rank() != 2) throw ShapeError("GroundTruth::stats", "rank", "region must be [H, W]");
  const std::size_t h = region.dim(0), w = region.dim(1);
  CellStats s;
  s.region_area = static_cast<double>(std::count_if(region.span().begin(), region.span().end(), [](float v) { return v != 0; }));
  double size_sum = 0;
  for (const auto& c : cells) {
    const auto px = static_cast<std::ptrdiff_t>(std::floor(c.x)), py = static_cast<std::ptrdiff_t>(std::floor(c.y));
    if (px < 0 || py < 0 || px >= static_cast<std::ptrdiff_t>(w) || py >= static_cast<std::ptrdiff_t>(h)) continue;
    if (region[static_cast<std::size_t>(py) * w + static_cast<std::size_t>(px)] == 0) continue;
    ++s.count;
    size_sum += c.area();
  }
  s.density = s.region_area > 0 ? static_cast<double>(s.count) / s.region_area : 0.0;
  s.mean_size = s.count > 0 ? size_sum / static_cast<double>(s.count) : 0.0;
  return s;
}

Patch generate_patch(const TextureSpec& spec, std::size_t size, std::uint64_t seed) {
  spec.validate();
  if (size < 32) throw ConfigError("/size", "patch size must be >= 32, got " + std::to_string(size));
  Rng rng(seed);
  const double s = static_cast<double>(size);

  // per-patch jitter
  const double scale = 1.0 + spec.density_jitter * rng.uniform(-1.0, 1.0);
  const double shift = spec.boundary_jitter * rng.uniform(-1.0, 1.0);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  TextureSpec local = spec;
  for (auto& b : local.boundaries) b = std::clamp(b + shift, 1e-3, 1.0 - 1e-3);
  for (std::size_t i = 1; i < local.boundaries.size(); ++i)
    local.boundaries[i] = std::max(local.boundaries[i], local.boundaries[i - 1] + 1e-3);

  const auto intensity = [&](double x, double y) {
    const double d = local.density[local.layer_at(y / s)] * scale;
    return d * (1.0 + spec.columnarity * std::cos(2.0 * std::numbers::pi * x / spec.column_period + phase));
  };
  double total = 0, peak = 0;
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double v = intensity(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      total += v;
      peak = std::max(peak, v);
    }

  Patch patch;
  const auto count = total > 0 ? rng.poisson(total) : 0;
  auto& cells = patch.truth.cells;
  for (std::int64_t n = 0; n < count; ++n) {
    for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
      CellRecord c;
      do {
        c.x = rng.uniform(0.0, s);
        c.y = rng.uniform(0.0, s);
      } while (rng.uniform() * peak >= intensity(c.x, c.y));
      c.layer = local.layer_at(c.y / s);
      const double r = std::max(1.0, spec.radius_mean[c.layer] + spec.radius_sd * rng.normal());
      const double e = rng.uniform(spec.eccentricity_min, spec.eccentricity_max);
      const double squash = std::pow(1.0 - e * e, 0.25);  // keeps pi a b = pi r^2
      c.a = r / squash;
      c.b = r * squash;
      c.theta = rng.uniform(0.0, std::numbers::pi);
      const double rc = equivalent_radius(c);
      const bool clash = std::any_of(cells.begin(), cells.end(), [&](const CellRecord& o) {
        const double ro = equivalent_radius(o);
        const double d = std::hypot(c.x - o.x, c.y - o.y);
        return (rc + ro - d) / (2.0 * std::min(rc, ro)) > spec.max_overlap;
      });
      if (!clash) {
        cells.push_back(c);
        break;
      }
    }
  }

  // render: per pixel, the darkest-covering cell wins so overlaps do not stack
  std::vector<double> cover(size * size, 0.0), ink(size * size, spec.background);
  for (const auto& c : cells) {
    const double level = spec.cell_intensity + spec.cell_intensity_sd * rng.normal();
    const double ct = std::cos(c.theta), st = std::sin(c.theta);
    const auto x0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(c.x - c.a - 1)));
    const auto x1 = static_cast<std::ptrdiff_t>(std::min(s - 1, std::floor(c.x + c.a + 1)));
    const auto y0 = static_cast<std::ptrdiff_t>(std::max(0.0, std::floor(c.y - c.a - 1)));
    const auto y1 = static_cast<std::ptrdiff_t>(std::min(s - 1, std::floor(c.y + c.a + 1)));
    for (auto py = y0; py <= y1; ++py)
      for (auto px = x0; px <= x1; ++px) {
        int inside = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx) {
            const double dx = static_cast<double>(px) + (sx + 0.5) / kSuper - c.x;
            const double dy = static_cast<double>(py) + (sy + 0.5) / kSuper - c.y;
            const double u = (dx * ct + dy * st) / c.a, v = (-dx * st + dy * ct) / c.b;
            inside += u * u + v * v <= 1.0;
          }
        const double f = static_cast<double>(inside) / (kSuper * kSuper);
        const auto i = static_cast<std::size_t>(py) * size + static_cast<std::size_t>(px);
        if (f > cover[i]) {
          cover[i] = f;
          ink[i] = level;
        }
      }
  }
  patch.pixels = nd::NdArray<float>::uninitialized({1, size, size});
  for (std::size_t i = 0; i < size * size; ++i) {
    const double v = spec.background + (ink[i] - spec.background) * cover[i] + spec.grain_sd * rng.normal();
    patch.pixels[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return patch;
}

std::vector<TextureSpec> default_classes(std::size_t k) {
  if (k < 2 || k > 8) throw ConfigError("/classes", "between 2 and 8 texture families are available, asked for " + std::to_string(k));
  std::vector<TextureSpec> all(8);
  auto set = [&](int id, const char* name, std::vector<double> bounds, std::vector<double> dens, std::vector<double> radii,
                 double bg, double col, double period) {
    auto& t = all[static_cast<std::size_t>(id)];
    t.class_id = id;
    t.name = name;
    t.boundaries = std::move(bounds);
    t.density = std::move(dens);
    t.radius_mean = std::move(radii);
    t.background = bg;
    t.columnarity = col;
    t.column_period = period;
  };
  set(0, "sparse", {}, {0.004}, {3.2}, 0.55, 0.0, 16);
  set(1, "dense", {}, {0.016}, {2.0}, 0.45, 0.0, 16);
  set(2, "dense-over-sparse", {0.5}, {0.016, 0.004}, {2.2, 3.0}, 0.5, 0.0, 16);
  set(3, "sparse-over-dense", {0.5}, {0.004, 0.016}, {3.0, 2.2}, 0.5, 0.0, 16);
  set(4, "central-band", {0.33, 0.67}, {0.004, 0.016, 0.004}, {3.0, 2.0, 3.0}, 0.6, 0.4, 16);
  set(5, "central-gap", {0.33, 0.67}, {0.016, 0.004, 0.016}, {2.2, 3.4, 2.2}, 0.4, 0.0, 16);
  set(6, "columnar-stripes", {0.25, 0.5, 0.75}, {0.014, 0.003, 0.014, 0.003}, {2.4, 2.8, 2.4, 2.8}, 0.55, 0.8, 16);
  set(7, "offset-stripes", {0.25, 0.5, 0.75}, {0.003, 0.014, 0.003, 0.014}, {2.8, 2.4, 2.8, 2.4}, 0.45, 0.8, 12);
  all.resize(k);
  return all;
}

std::vector<double> density_profile(const TextureSpec& spec, std::size_t bins) {
  std::vector<double> out(bins);
  for (std::size_t i = 0; i < bins; ++i)
    out[i] = 100.0 * spec.density[spec.layer_at((static_cast<double>(i) + 0.5) / static_cast<double>(bins))];
  return out;
}

double profile_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw Error("profile_distance: profiles differ in length");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::abs(a[i] - b[i]);
  return d / static_cast<double>(a.size());
}

nd::NdArray<float> Corpus::images(const std::vector<std::size_t>& indices) const {
  auto out = nd::NdArray<float>::uninitialized({indices.size(), 1, size, size});
  const std::size_t per = size * size;
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy_n(samples.at(indices[i]).patch.pixels.data(), per, out.data() + i * per);
  return out;
}

std::vector<int> Corpus::labels(const std::vector<std::size_t>& indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (const auto i : indices) out.push_back(samples.at(i).label);
  return out;
}

Corpus make_corpus(std::size_t k, std::size_t n_per_class, std::size_t size, std::uint64_t seed) {
  Corpus corpus;
  corpus.size = size;
  corpus.seed = seed;
  corpus.classes = default_classes(k);
  const Rng root = Rng(seed).fork("synth");
  corpus.samples.resize(k * n_per_class);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t i = 0; i < n_per_class; ++i) {
      auto& s = corpus.samples[c * n_per_class + i];
      s.label = static_cast<int>(c);
      s.seed = root.fork(c).fork(i).seed();
    }
  const auto n = static_cast<std::ptrdiff_t>(corpus.samples.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto& s = corpus.samples[static_cast<std::size_t>(i)];
    s.patch = generate_patch(corpus.classes[static_cast<std::size_t>(s.label)], size, s.seed);
  }
  const auto n_train = static_cast<std::size_t>(std::llround(kTrainFraction * static_cast<double>(n_per_class)));
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> idx(n_per_class);
    for (std::size_t i = 0; i < n_per_class; ++i) idx[i] = c * n_per_class + i;
    Rng split = root.fork("split").fork(c);
    for (std::size_t i = idx.size(); i > 1; --i)  // Fisher-Yates with our own draws for portability
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(split.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    corpus.train.insert(corpus.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    corpus.eval.insert(corpus.eval.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  return corpus;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "truth");
  nlohmann::json manifest;
  manifest["size"] = corpus.size;
  manifest["seed"] = corpus.seed;
  manifest["classes"] = nlohmann::json::array();
  for (const auto& c : corpus.classes) manifest["classes"].push_back(c.to_json());
  manifest["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    const auto name = index_name(i);
    manifest["samples"].push_back({{"label", s.label}, {"seed", s.seed}, {"image", "images/" + name + ".png"},
                                   {"truth", "truth/" + name + ".jsonl"}});
    io::save_png(dir / "images" / (name + ".png"), s.patch.pixels);
    std::ofstream os(dir / "truth" / (name + ".jsonl"));
    if (!os) throw DataError("cannot write ground truth for sample " + name);
    for (const auto& cell : s.patch.truth.cells) os << cell.to_json().dump() << "\n";
  }
  manifest["train"] = corpus.train;
  manifest["eval"] = corpus.eval;
  io::write_json(dir / "corpus.json", manifest);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  const auto manifest = io::read_json(dir / "corpus.json");
  const std::string where = (dir / "corpus.json").string();
  Corpus corpus;
  corpus.size = get_field<std::size_t>(manifest, "size", where);
  corpus.seed = get_field<std::uint64_t>(manifest, "seed", where);
  for (const auto& c : get_field<nlohmann::json>(manifest, "classes", where)) {
    try {
      corpus.classes.push_back(TextureSpec::from_json(c));
    } catch (const ConfigError& e) {
      throw DataError(where + ": class spec: " + e.what());
    }
  }
  const auto samples = get_field<nlohmann::json>(manifest, "samples", where);
  corpus.samples.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& s = corpus.samples[i];
    const auto& js = samples[i];
    s.label = get_field<int>(js, "label", where);
    s.seed = get_field<std::uint64_t>(js, "seed", where);
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= corpus.classes.size())
      throw DataError(where + ": sample " + std::to_string(i) + " has unknown label");
    s.patch.pixels = io::load_png(dir / get_field<std::string>(js, "image", where));
    if (s.patch.pixels.dim(1) != corpus.size || s.patch.pixels.dim(2) != corpus.size)
      throw DataError(where + ": sample " + std::to_string(i) + " has the wrong size");
    std::ifstream is(dir / get_field<std::string>(js, "truth", where));
    if (!is) throw DataError(where + ": missing ground truth for sample " + std::to_string(i));
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) s.patch.truth.cells.push_back(CellRecord::from_json(nlohmann::json::parse(line)));
  }
  corpus.train = get_field<std::vector<std::size_t>>(manifest, "train", where);
  corpus.eval = get_field<std::vector<std::size_t>>(manifest, "eval", where);
  for (const auto i : corpus.train)
    if (i >= corpus.samples.size()) throw DataError(where + ": train index out of range");
  for (const auto i : corpus.eval)
    if (i >= corpus.samples.size()) throw DataError(where + ": eval index out of range");
  return corpus;
}

bool known_region_reaches_border(const nd::NdArray<float>& mask) {
  if (mask.rank() != 2) throw ShapeError("known_region_reaches_border", "rank", "mask must be [H, W]");
  const std::size_t h = mask.dim(0), w = mask.dim(1);
  std::vector<char> seen(h * w, 0);
  std::deque<std::size_t> queue;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const auto i = y * w + x;
      if ((y == 0 || x == 0 || y + 1 == h || x + 1 == w) && mask[i] != 0) {
        seen[i] = 1;
        queue.push_back(i);
      }
    }
  while (!queue.empty()) {
    const auto i = queue.front();
    queue.pop_front();
    const std::size_t y = i / w, x = i % w;
    const std::size_t nb[4] = {y > 0 ? i - w : i, y + 1 < h ? i + w : i, x > 0 ? i - 1 : i, x + 1 < w ? i + 1 : i};
    for (const auto j : nb)
      if (!seen[j] && mask[j] != 0) {
        seen[j] = 1;
        queue.push_back(j);
      }
  }
  for (std::size_t i = 0; i < h * w; ++i)
    if (mask[i] != 0 && !seen[i]) return false;
  return true;
}

nd::NdArray<float> make_mask(std::size_t size, double target_coverage, std::uint64_t seed) {
  if (!(target_coverage >= kMinCoverage && target_coverage <= kMaxCoverage))
    throw ConfigError("/coverage", "target coverage must lie in [0.05, 0.5], got " + std::to_string(target_coverage));
  if (size < 8) throw ConfigError("/size", "mask size must be >= 8");
  Rng rng(seed);
  const std::size_t n = size * size;
  const auto target = static_cast<std::size_t>(std::llround(target_coverage * static_cast<double>(n)));
  nd::NdArray<float> mask({size, size}, 1.0f);
  std::size_t holes = 0;
  const auto s = static_cast<double>(size);

  const auto stamp = [&](double cx, double cy, double radius) {
    const auto x0 = static_cast<std::ptrdiff_t>(std::floor(cx - radius)), x1 = static_cast<std::ptrdiff_t>(std::ceil(cx + radius));
    const auto y0 = static_cast<std::ptrdiff_t>(std::floor(cy - radius)), y1 = static_cast<std::ptrdiff_t>(std::ceil(cy + radius));
    for (auto y = std::max<std::ptrdiff_t>(0, y0); y <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(size) - 1, y1); ++y)
      for (auto x = std::max<std::ptrdiff_t>(0, x0); x <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(size) - 1, x1); ++x) {
        const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
        auto& m = mask[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
        if (dx * dx + dy * dy <= radius * radius && m != 0.0f) {
          m = 0.0f;
          ++holes;
        }
      }
  };

  // random-walk strokes until the hole is at least as large as the target
  constexpr int kMaxStrokes = 500;
  int strokes = 0;
  while (holes < target) {
    if (++strokes > kMaxStrokes) throw DataError("make_mask: coverage " + std::to_string(target_coverage) + " not reached");
    double x = rng.uniform(0.0, s), y = rng.uniform(0.0, s);
    double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double radius = 0.5 * static_cast<double>(rng.uniform_int(4, 16));
    const auto vertices = rng.uniform_int(3, 8);
    for (std::int64_t v = 0; v < vertices && holes < target; ++v) {
      const double len = rng.uniform(4.0, 12.0);
      for (double step = 0; step < len; step += 1.0) {
        stamp(x, y, radius);
        x = std::clamp(x + std::cos(angle), 0.0, s);
        y = std::clamp(y + std::sin(angle), 0.0, s);
      }
      angle += rng.uniform(-std::numbers::pi / 3, std::numbers::pi / 3);
    }
  }

  // known islands enclosed by the hole become hole, so the frame always reaches the known tissue
  {
    nd::NdArray<float> reach({size, size});
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t yy = i / size, xx = i % size;
      if ((yy == 0 || xx == 0 || yy + 1 == size || xx + 1 == size) && mask[i] != 0) {
        reach[i] = 1;
        queue.push_back(i);
      }
    }
    while (!queue.empty()) {
      const auto i = queue.front();
      queue.pop_front();
      const std::size_t yy = i / size, xx = i % size;
      const std::size_t nb[4] = {yy > 0 ? i - size : i, yy + 1 < size ? i + size : i, xx > 0 ? i - 1 : i,
                                 xx + 1 < size ? i + 1 : i};
      for (const auto j : nb)
        if (reach[j] == 0 && mask[j] != 0) {
          reach[j] = 1;
          queue.push_back(j);
        }
    }
    for (std::size_t i = 0; i < n; ++i)
      if (mask[i] != 0 && reach[i] == 0) {
        mask[i] = 0;
        ++holes;
      }
  }

  // peel hole pixels that touch known tissue until the count is exact
  while (holes > target) {
    std::vector<std::size_t> edge;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i] != 0) continue;
      const std::size_t yy = i / size, xx = i % size;
      const bool touches = (yy > 0 && mask[i - size] != 0) || (yy + 1 < size && mask[i + size] != 0) ||
                           (xx > 0 && mask[i - 1] != 0) || (xx + 1 < size && mask[i + 1] != 0);
      if (touches) edge.push_back(i);
    }
    if (edge.empty()) throw DataError("make_mask: hole has no boundary to trim");
    for (std::size_t i = edge.size(); i > 1; --i)
      std::swap(edge[i - 1], edge[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    // peel at most half the rim per round so the shape shrinks evenly
    const std::size_t take = std::min(holes - target, std::max<std::size_t>(1, edge.size() / 2));
    for (std::size_t k = 0; k < take; ++k) mask[edge[k]] = 1.0f;
    holes -= take;
  }
  return mask;
}

}  // namespace repaintlab::synth
