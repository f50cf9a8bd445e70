#include "repaintlab/metrics/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <string>

#include "repaintlab/error.hpp"
#include "repaintlab/io/io.hpp"
#include "repaintlab/ndcore/ndt.hpp"

namespace repaintlab::metrics {

namespace {

constexpr float kNormEps = 1e-5f;

std::string stage_name(std::size_t s, const char* part) { return "stage." + std::to_string(s) + "." + part; }

std::size_t groups_for(const EmbedderConfig& c, std::size_t channels) { return std::gcd(c.norm_groups, channels); }

struct Spec {
  std::string name;
  nd::Shape shape;
  int init;  // 0 uniform, 1 zero, 2 one
};

std::vector<Spec> layout(const EmbedderConfig& c) {
  std::vector<Spec> out;
  std::size_t cin = 1;
  for (std::size_t s = 0; s < c.stages.size(); ++s) {
    const std::size_t ch = c.stages[s];
    out.push_back({stage_name(s, "conv1.w"), {ch, cin, 3, 3}, 0});
    out.push_back({stage_name(s, "conv1.b"), {ch}, 0});
    out.push_back({stage_name(s, "norm1.gain"), {ch}, 2});
    out.push_back({stage_name(s, "norm1.bias"), {ch}, 1});
    out.push_back({stage_name(s, "conv2.w"), {ch, ch, 3, 3}, 0});
    out.push_back({stage_name(s, "conv2.b"), {ch}, 0});
    out.push_back({stage_name(s, "norm2.gain"), {ch}, 2});
    out.push_back({stage_name(s, "norm2.bias"), {ch}, 1});
    cin = ch;
  }
  out.push_back({"head.w", {c.classes, c.feature_dim()}, 0});
  out.push_back({"head.b", {c.classes}, 1});
  return out;
}

void check_images(const EmbedderConfig& c, const nd::NdArray<float>& images, const char* op) {
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != c.input_size || s[3] != c.input_size)
    throw ShapeError(op, "image", "need [N, 1, " + std::to_string(c.input_size) + ", " + std::to_string(c.input_size) +
                                      "], got " + nd::shape_str(s));
}

/// Runs the frozen model over images in chunks and gathers one output.
nd::NdArray<double> run(const Embedder& m, const nd::NdArray<float>& images, std::size_t batch, bool logits) {
  check_images(m.config, images, logits ? "classify" : "embed");
  if (batch == 0) throw Error("embed: batch must be positive");
  const std::size_t n = images.dim(0), per = images.size() / std::max<std::size_t>(n, 1);
  const std::size_t width = logits ? m.config.classes : m.config.feature_dim();
  nd::require_finite(images, logits ? "classify" : "embed");
  nd::NdArray<double> out({n, width});
  std::exception_ptr failure;
  const auto chunks = static_cast<std::ptrdiff_t>((n + batch - 1) / batch);
  // Chunks are independent and each result depends only on its own images.
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t ci = 0; ci < chunks; ++ci) {
    try {
      const std::size_t start = static_cast<std::size_t>(ci) * batch, count = std::min(batch, n - start);
      auto chunk = nd::NdArray<float>::uninitialized({count, 1, m.config.input_size, m.config.input_size});
      std::copy_n(images.data() + start * per, count * per, chunk.data());
      nd::Tape<float> tape(false);
      const auto o = embedder_forward(tape, m.config, m.params, tape.constant(std::move(chunk)));
      const auto& v = (logits ? o.logits : o.features).value();
      for (std::size_t i = 0; i < v.size(); ++i) out[start * width + i] = v[i];
    } catch (...) {
#pragma omp critical(repaintlab_embed_error)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  nd::require_finite(out, logits ? "classify" : "embed");
  return out;
}

}  // namespace

void EmbedderConfig::validate() const {
  if (stages.empty()) throw ConfigError("/stages", "need at least one stage");
  for (std::size_t i = 0; i < stages.size(); ++i)
    if (stages[i] == 0) throw ConfigError("/stages/" + std::to_string(i), "channels must be positive");
  if (classes < 2) throw ConfigError("/classes", "need at least 2 classes");
  if (norm_groups == 0) throw ConfigError("/norm_groups", "must be positive");
  if (input_size < (std::size_t{1} << stages.size()) || input_size % (std::size_t{1} << stages.size()) != 0)
    throw ConfigError("/input_size", "must be divisible by 2^stages");
}

nlohmann::json EmbedderConfig::to_json() const {
  return {{"input_size", input_size}, {"stages", stages}, {"classes", classes}, {"norm_groups", norm_groups}};
}

EmbedderConfig EmbedderConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("", "embedder config must be an object");
  EmbedderConfig c;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = "/" + key;
    try {
      if (key == "input_size") c.input_size = value.get<std::size_t>();
      else if (key == "stages") c.stages = value.get<std::vector<std::size_t>>();
      else if (key == "classes") c.classes = value.get<std::size_t>();
      else if (key == "norm_groups") c.norm_groups = value.get<std::size_t>();
      else throw ConfigError(ptr, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ptr, e.what());
    }
  }
  c.validate();
  return c;
}

template <typename T>
nd::ParamMap<T> build_embedder(const EmbedderConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  nd::ParamMap<T> params;
  for (const auto& spec : layout(config)) {
    nd::NdArray<T> a(spec.shape);
    if (spec.init == 2) {
      std::fill(a.span().begin(), a.span().end(), T(1));
    } else if (spec.init == 0) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < spec.shape.size(); ++d) fan_in *= spec.shape[d];
      if (spec.shape.size() == 1) fan_in = spec.shape[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Rng rng = root.fork(spec.name);
      for (auto& v : a.span()) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    params.emplace(spec.name, std::move(a));
  }
  return params;
}

template <typename T>
EmbedderOutput<T> embedder_forward(nd::Tape<T>& tape, const EmbedderConfig& config, const nd::ParamMap<T>& params,
                                   nd::Var<T> images) {
  using namespace nd::ops;
  const auto p = [&](const std::string& name) {
    const auto it = params.find(name);
    if (it == params.end()) throw DataError("embedder parameter '" + name + "' is missing");
    return tape.parameter(name, it->second);
  };
  const auto& s = images.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != config.input_size || s[3] != config.input_size)
    throw ShapeError("embedder_forward", "image", "got " + nd::shape_str(s));
  nd::require_finite(images.value(), "embedder input");
  auto h = images;
  for (std::size_t st = 0; st < config.stages.size(); ++st) {
    const std::size_t g = groups_for(config, config.stages[st]);
    const auto b1 = p(stage_name(st, "conv1.b"));
    h = conv2d(h, p(stage_name(st, "conv1.w")), &b1, 2, 1);
    h = silu(group_norm(h, g, p(stage_name(st, "norm1.gain")), p(stage_name(st, "norm1.bias")), T(kNormEps)));
    const auto b2 = p(stage_name(st, "conv2.b"));
    h = conv2d(h, p(stage_name(st, "conv2.w")), &b2, 1, 1);
    h = silu(group_norm(h, g, p(stage_name(st, "norm2.gain")), p(stage_name(st, "norm2.bias")), T(kNormEps)));
  }
  const auto features = global_avg_pool(h);
  const auto hb = p("head.b");
  return {features, linear(features, p("head.w"), &hb)};
}

nd::NdArray<double> embed(const Embedder& model, const nd::NdArray<float>& images, std::size_t batch) {
  return run(model, images, batch, false);
}

nd::NdArray<double> classify(const Embedder& model, const nd::NdArray<float>& images, std::size_t batch) {
  return run(model, images, batch, true);
}

std::size_t stats_floor(const Embedder& model) { return std::max<std::size_t>(64, model.config.feature_dim() / 2); }

GaussianStats embed_stats(const Embedder& model, const nd::NdArray<float>& images) {
  const std::size_t n = images.rank() == 4 ? images.dim(0) : 0;
  if (n < stats_floor(model))
    throw DataError("embed_stats: need at least " + std::to_string(stats_floor(model)) + " images, got " +
                    std::to_string(n));
  return gaussian_stats(embed(model, images));
}

void EmbedderTrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("/epochs", "must be positive");
  if (batch_size == 0) throw ConfigError("/batch_size", "must be positive");
  if (!(learning_rate > 0)) throw ConfigError("/learning_rate", "must be positive");
  if (!(accuracy_floor >= 0 && accuracy_floor <= 1)) throw ConfigError("/accuracy_floor", "must lie in [0, 1]");
}

nlohmann::json EmbedderTrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"accuracy_floor", accuracy_floor}};
}

EmbedderTrainConfig EmbedderTrainConfig::from_json(const nlohmann::json& j, const std::string& pointer_prefix) {
  if (!j.is_object()) throw ConfigError(pointer_prefix.empty() ? "/" : pointer_prefix, "must be a JSON object");
  EmbedderTrainConfig c;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = pointer_prefix + "/" + key;
    try {
      if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "accuracy_floor") c.accuracy_floor = value.get<double>();
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

Embedder train_embedder(const synth::Corpus& corpus, const EmbedderTrainConfig& config,
                        const std::function<void(std::size_t, double)>& on_epoch) {
  config.validate();
  if (corpus.classes.size() < 2) throw DataError("train_embedder: corpus needs at least 2 classes");
  if (corpus.train.empty() || corpus.eval.empty()) throw DataError("train_embedder: corpus split is empty");
  Embedder model;
  model.config.input_size = corpus.size;
  model.config.classes = corpus.classes.size();
  const Rng root(config.seed);
  model.params = build_embedder<float>(model.config, root.fork("embedder/init").seed());
  std::vector<std::string> names;
  for (const auto& [name, _] : model.params) names.push_back(name);
  nd::Adam<float> adam(nd::AdamConfig{config.learning_rate});
  Rng shuffle = root.fork("embedder/shuffle");
  std::vector<std::size_t> order = corpus.train;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + config.batch_size)));
      nd::Tape<float> tape;
      const auto out = embedder_forward(tape, model.config, model.params, tape.constant(corpus.images(idx)));
      const auto loss = nd::ops::cross_entropy(out.logits, corpus.labels(idx));
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw NonFiniteError("embedder loss became non-finite in epoch " + std::to_string(epoch));
      adam.step(model.params, nd::backprop(loss, names));
      loss_sum += lv;
      ++batches;
    }
    if (on_epoch) on_epoch(epoch, loss_sum / static_cast<double>(batches));
  }

  const auto logits = classify(model, corpus.images(corpus.eval));
  const auto labels = corpus.labels(corpus.eval);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = logits.data() + i * model.config.classes;
    const auto best = std::max_element(row, row + model.config.classes) - row;
    correct += best == labels[i];
  }
  model.eval_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  if (model.eval_accuracy < config.accuracy_floor)
    throw DataError("embedder eval accuracy " + std::to_string(model.eval_accuracy) + " is below the floor " +
                    std::to_string(config.accuracy_floor));
  return model;
}

void save_embedder(const std::filesystem::path& dir, const Embedder& model) {
  std::filesystem::create_directories(dir);
  io::write_json(dir / "embedder.json", {{"config", model.config.to_json()}, {"eval_accuracy", model.eval_accuracy}});
  nd::save_param_bundle(dir / "params.ndt", model.params);
}

Embedder load_embedder(const std::filesystem::path& dir) {
  const auto j = io::read_json(dir / "embedder.json");
  Embedder m;
  try {
    m.config = EmbedderConfig::from_json(j.at("config"));
    m.eval_accuracy = j.at("eval_accuracy").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError((dir / "embedder.json").string() + ": " + e.what());
  }
  m.params = nd::load_param_bundle<float>(dir / "params.ndt");
  const auto specs = layout(m.config);
  for (const auto& spec : specs) {
    const auto it = m.params.find(spec.name);
    if (it == m.params.end()) throw DataError("embedder is missing parameter '" + spec.name + "'");
    if (it->second.shape() != spec.shape) throw DataError("embedder parameter '" + spec.name + "' has the wrong shape");
  }
  if (m.params.size() != specs.size()) throw DataError("embedder has parameters its config does not use");
  return m;
}

template nd::ParamMap<float> build_embedder<float>(const EmbedderConfig&, std::uint64_t);
template nd::ParamMap<double> build_embedder<double>(const EmbedderConfig&, std::uint64_t);
template EmbedderOutput<float> embedder_forward<float>(nd::Tape<float>&, const EmbedderConfig&,
                                                       const nd::ParamMap<float>&, nd::Var<float>);
template EmbedderOutput<double> embedder_forward<double>(nd::Tape<double>&, const EmbedderConfig&,
                                                         const nd::ParamMap<double>&, nd::Var<double>);

}  // namespace repaintlab::metrics
