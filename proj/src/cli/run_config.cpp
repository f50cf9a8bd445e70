#include "repaintlab/cli/run_config.hpp"

#include "repaintlab/error.hpp"
#include "repaintlab/io/io.hpp"

#ifndef REPAINTLAB_VERSION
#define REPAINTLAB_VERSION "unknown"
#endif

namespace repaintlab::cli {

namespace {

template <typename F>
void each_key(const nlohmann::json& j, const std::string& prefix, F&& f) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "/" : prefix, "must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = prefix + "/" + key;
    try {
      if (!f(key, value)) throw ConfigError(ptr, "unknown key");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(ptr, e.what());
    }
  }
}

template <typename C>
C revalidated(C c, const std::string& prefix) {
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.pointer(), e.detail());
  }
  return c;
}

}  // namespace

void CorpusConfig::validate() const {
  if (classes < 2 || classes > 8) throw ConfigError("/classes", "must lie in 2..8");
  if (per_class < 2) throw ConfigError("/per_class", "need at least 2 patches per class");
  if (size < 32) throw ConfigError("/size", "must be at least 32");
}

nlohmann::json CorpusConfig::to_json() const {
  return {{"classes", classes}, {"per_class", per_class}, {"size", size}, {"seed", seed}};
}

CorpusConfig CorpusConfig::from_json(const nlohmann::json& j, const std::string& prefix) {
  CorpusConfig c;
  each_key(j, prefix, [&](const std::string& k, const nlohmann::json& v) {
    if (k == "classes") c.classes = v.get<std::size_t>();
    else if (k == "per_class") c.per_class = v.get<std::size_t>();
    else if (k == "size") c.size = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return revalidated(c, prefix);
}

void RepaintConfig::validate() const {
  if (jump < 1) throw ConfigError("/jump", "must be at least 1");
  if (batch == 0) throw ConfigError("/batch", "must be positive");
}

nlohmann::json RepaintConfig::to_json() const { return {{"jump", jump}, {"batch", batch}, {"seed", seed}}; }

RepaintConfig RepaintConfig::from_json(const nlohmann::json& j, const std::string& prefix) {
  RepaintConfig c;
  each_key(j, prefix, [&](const std::string& k, const nlohmann::json& v) {
    if (k == "jump") c.jump = v.get<int>();
    else if (k == "batch") c.batch = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return revalidated(c, prefix);
}

nlohmann::json RunConfig::to_json() const {
  return {{"corpus", corpus.to_json()},     {"denoiser", denoiser.to_json()}, {"train", train.to_json()},
          {"repaint", repaint.to_json()},   {"metrics", metrics.to_json()},   {"evaluate", evaluate.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  each_key(j, "", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "corpus") c.corpus = CorpusConfig::from_json(v, "/corpus");
    else if (k == "denoiser") {
      try {
        c.denoiser = denoiser::DenoiserConfig::from_json(v);
      } catch (const ConfigError& e) {
        throw ConfigError("/denoiser" + e.pointer(), e.detail());
      }
    } else if (k == "train") c.train = diffusion::TrainConfig::from_json(v, "/train");
    else if (k == "repaint") c.repaint = RepaintConfig::from_json(v, "/repaint");
    else if (k == "metrics") c.metrics = metrics::EmbedderTrainConfig::from_json(v, "/metrics");
    else if (k == "evaluate") c.evaluate = eval::EvalConfig::from_json(v, "/evaluate");
    else return false;
    return true;
  });
  if (c.denoiser.input_size != c.corpus.size)
    throw ConfigError("/denoiser/input_size", "must equal /corpus/size (" + std::to_string(c.corpus.size) + ")");
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (path.empty()) return RunConfig{};
  return from_json(io::read_json(path));
}

nlohmann::json Provenance::to_json() const {
  nlohmann::json in = nlohmann::json::object();
  for (const auto& [k, v] : inputs) in[k] = v;
  nlohmann::json j = {{"tool", "repaintlab"}, {"version", tool_version()}, {"command", command},
                      {"seed", seed},         {"config", config},         {"inputs", in}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

std::string tool_version() { return REPAINTLAB_VERSION; }

}  // namespace repaintlab::cli
