#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <json.hpp>

#include "repaintlab/metrics/frechet.hpp"
#include "repaintlab/ndcore/adam.hpp"
#include "repaintlab/ndcore/tape.hpp"
#include "repaintlab/synthlab/synth.hpp"

namespace repaintlab::metrics {

/// Small classifier whose pooled activations serve as the latent space.
/// Stage s: 3x3 stride-2 conv -> GN -> SiLU -> 3x3 conv -> GN -> SiLU.
/// Features are the global average of the last stage; a linear head maps
/// them to class logits.
struct EmbedderConfig {
  std::size_t input_size = 64;
  std::vector<std::size_t> stages{16, 32, 64, 128};
  std::size_t classes = 8;
  std::size_t norm_groups = 8;

  std::size_t feature_dim() const { return stages.back(); }
  void validate() const;
  nlohmann::json to_json() const;
  static EmbedderConfig from_json(const nlohmann::json& j);
  bool operator==(const EmbedderConfig&) const = default;
};

struct Embedder {
  EmbedderConfig config;
  nd::ParamMap<float> params;
  double eval_accuracy = 0;
};

template <typename T>
nd::ParamMap<T> build_embedder(const EmbedderConfig& config, std::uint64_t seed);

template <typename T>
struct EmbedderOutput {
  nd::Var<T> features;  // [N, D]
  nd::Var<T> logits;    // [N, K]
};

template <typename T>
EmbedderOutput<T> embedder_forward(nd::Tape<T>& tape, const EmbedderConfig& config, const nd::ParamMap<T>& params,
                                   nd::Var<T> images);

/// Features [N, D] in double, evaluated in chunks of `batch`.
nd::NdArray<double> embed(const Embedder& model, const nd::NdArray<float>& images, std::size_t batch = 64);
/// Logits [N, K].
nd::NdArray<double> classify(const Embedder& model, const nd::NdArray<float>& images, std::size_t batch = 64);

/// Minimum sample count before moments may be compared.
std::size_t stats_floor(const Embedder& model);
/// gaussian_stats of the embedded images; throws DataError below the floor.
GaussianStats embed_stats(const Embedder& model, const nd::NdArray<float>& images);

struct EmbedderTrainConfig {
  std::size_t epochs = 6;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double accuracy_floor = 0.95;

  void validate() const;
  nlohmann::json to_json() const;
  static EmbedderTrainConfig from_json(const nlohmann::json& j, const std::string& pointer_prefix = "");
};

/// Supervised training on the corpus train split; accuracy is measured on the
/// eval split. Throws DataError when it ends below config.accuracy_floor.
Embedder train_embedder(const synth::Corpus& corpus, const EmbedderTrainConfig& config,
                        const std::function<void(std::size_t epoch, double loss)>& on_epoch = {});

/// Directory with embedder.json (config, eval accuracy) and params.ndt.
void save_embedder(const std::filesystem::path& dir, const Embedder& model);
Embedder load_embedder(const std::filesystem::path& dir);

}  // namespace repaintlab::metrics
