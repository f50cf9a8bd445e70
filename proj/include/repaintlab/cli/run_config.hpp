#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "repaintlab/denoiser/unet.hpp"
#include "repaintlab/diffusion/ddpm.hpp"
#include "repaintlab/evalharness/evaluate.hpp"
#include "repaintlab/metrics/embedder.hpp"

namespace repaintlab::cli {

struct CorpusConfig {
  std::size_t classes = 8;
  std::size_t per_class = 500;
  std::size_t size = 64;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static CorpusConfig from_json(const nlohmann::json& j, const std::string& pointer_prefix);
};

struct RepaintConfig {
  int jump = 5;
  std::size_t batch = 16;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static RepaintConfig from_json(const nlohmann::json& j, const std::string& pointer_prefix);
};

/// Every field is optional; absent fields keep the defaults above and in the
/// module configs. Unknown keys anywhere are rejected with their JSON pointer.
struct RunConfig {
  CorpusConfig corpus;
  denoiser::DenoiserConfig denoiser;
  diffusion::TrainConfig train;
  RepaintConfig repaint;
  metrics::EmbedderTrainConfig metrics;
  eval::EvalConfig evaluate;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// Defaults when path is empty.
  static RunConfig load(const std::filesystem::path& path);
};

/// Written as provenance.json into every artifact directory (or as a
/// <file>.prov.json sidecar). Contains no timestamps, so reruns match.
struct Provenance {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // name -> sha256
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
};

std::string tool_version();

}  // namespace repaintlab::cli
