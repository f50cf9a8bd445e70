#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "repaintlab/ndcore/adam.hpp"
#include "repaintlab/ndcore/tape.hpp"

namespace repaintlab::denoiser {

/// Residual U-Net hyperparameters. Level l works at input_size >> l pixels
/// with base_channels * channel_mult[l] channels; the decoder mirrors the
/// encoder block-for-block.
struct DenoiserConfig {
  std::size_t input_size = 64;
  std::size_t in_channels = 1;
  std::size_t base_channels = 32;
  std::vector<std::size_t> channel_mult{1, 2, 2, 4};
  std::vector<std::size_t> res_blocks_encoder{2, 2, 2, 1};
  std::set<std::size_t> attention_resolutions{8, 16, 32};
  std::size_t time_embed_dim = 128;
  std::size_t norm_groups = 8;
  std::size_t attention_heads = 1;
  /// Valid timesteps are 1..timesteps.
  std::size_t timesteps = 64;

  std::size_t levels() const noexcept { return channel_mult.size(); }
  std::size_t channels(std::size_t level) const { return base_channels * channel_mult.at(level); }
  std::size_t resolution(std::size_t level) const { return input_size >> level; }
  /// Two prediction channels (noise, variance coefficient) per input channel.
  std::size_t out_channels() const noexcept { return 2 * in_channels; }
  std::size_t encoder_blocks() const;
  std::size_t decoder_blocks() const;

  /// Throws ConfigError for inconsistent structure.
  void validate() const;

  nlohmann::json to_json() const;
  static DenoiserConfig from_json(const nlohmann::json& j);

  bool operator==(const DenoiserConfig&) const = default;
};

template <typename T>
using DenoiserParams = nd::ParamMap<T>;

/// Deterministic initialization. The final projection is zero so a fresh
/// model predicts eps = 0 and v = 0.5 everywhere.
template <typename T>
DenoiserParams<T> build(const DenoiserConfig& config, std::uint64_t seed);

/// Closed-form parameter count of a configuration.
std::size_t parameter_count(const DenoiserConfig& config);

/// Sinusoidal conditioning vector: interleaved (sin, cos) pairs of t scaled by
/// geometric frequencies from 1 down to 1/10000. `steps` is the schedule
/// length; the frequency ladder does not depend on it.
std::vector<double> timestep_embedding(int t, std::size_t dim, int steps);

template <typename T>
struct Prediction {
  nd::Var<T> eps;       // [N, C, H, W]
  nd::Var<T> variance;  // [N, C, H, W], sigmoid-squashed into [0, 1]
};

/// Records the network on `tape`. x_t is [N, in_channels, S, S]; one timestep per sample.
template <typename T>
Prediction<T> forward(nd::Tape<T>& tape, const DenoiserConfig& config, const DenoiserParams<T>& params,
                      nd::Var<T> x_t, std::span<const int> timesteps);

template <typename T>
struct PredictionValues {
  nd::NdArray<T> eps;
  nd::NdArray<T> variance;
};

/// Gradient-free evaluation.
template <typename T>
PredictionValues<T> predict(const DenoiserConfig& config, const DenoiserParams<T>& params, const nd::NdArray<T>& x_t,
                            std::span<const int> timesteps);

/// Checkpoint directory: config.json + params.ndt (parameter bundle).
struct Checkpoint {
  DenoiserConfig config;
  DenoiserParams<float> params;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace repaintlab::denoiser
