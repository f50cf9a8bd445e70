#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "repaintlab/denoiser/unet.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::testing {

inline std::filesystem::path fixture_dir() { return std::filesystem::path(REPAINTLAB_FIXTURE_DIR); }

inline bool regenerating_fixtures() { return std::getenv("REPAINTLAB_REGEN_FIXTURES") != nullptr; }

/// FNV-1a over raw bytes; stable within one build for bit-identical data.
inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline denoiser::DenoiserConfig micro_config() {
  denoiser::DenoiserConfig c;
  c.input_size = 8;
  c.base_channels = 4;
  c.channel_mult = {1, 2};
  c.res_blocks_encoder = {1, 1};
  c.attention_resolutions = {4};
  c.time_embed_dim = 8;
  c.norm_groups = 2;
  c.timesteps = 16;
  return c;
}

/// Gives every parameter, including zero-initialized ones, a random value so
/// that all paths carry signal.
template <typename T>
void scramble(denoiser::DenoiserParams<T>& params, std::uint64_t seed, double scale = 0.3) {
  const Rng root(seed);
  for (auto& [name, a] : params) {
    Rng rng = root.fork(name);
    const bool gain = name.find(".gain") != std::string::npos;
    for (auto& v : a.span()) v = static_cast<T>((gain ? 1.0 : 0.0) + scale * rng.normal());
  }
}

}  // namespace repaintlab::testing
