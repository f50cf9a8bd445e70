#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "repaintlab/denoiser/unet.hpp"
#include "repaintlab/ndcore/ndarray.hpp"
#include "repaintlab/rng.hpp"

namespace repaintlab::diffusion {

/// Per-step coefficients, indexed by t = 0..T. Entry 0 is the clean image
/// (beta[0] = 0, alpha_bar[0] = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  /// beta[t] (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]); zero at t = 1.
  std::vector<double> posterior_variance;
  /// log posterior_variance with the t = 1 entry replaced by the t = 2 value.
  std::vector<double> posterior_log_variance_clipped;
  /// Posterior mean = coef_x0[t] x0 + coef_xt[t] x_t.
  std::vector<double> posterior_coef_x0;
  std::vector<double> posterior_coef_xt;

  void check_step(int t, const char* op) const;
};

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

NoiseSchedule cosine_schedule(int T);

/// sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) noise, one t per sample.
template <typename T>
nd::NdArray<T> q_sample(const NoiseSchedule& s, const nd::NdArray<T>& x0, std::span<const int> t,
                        const nd::NdArray<T>& noise);
template <typename T>
nd::NdArray<T> q_sample(const NoiseSchedule& s, const nd::NdArray<T>& x0, int t, const nd::NdArray<T>& noise);

/// Single forward kernel from t-1 to t: sqrt(alpha[t]) x + sqrt(beta[t]) noise.
template <typename T>
nd::NdArray<T> forward_step(const NoiseSchedule& s, const nd::NdArray<T>& x_prev, int t, const nd::NdArray<T>& noise);

/// Gaussian p(x_{t-1} | x_t) implied by a network prediction.
template <typename T>
struct ReverseMoments {
  nd::NdArray<T> x0_hat;        // reconstructed from eps, clamped to [-1, 1]
  nd::NdArray<T> mean;
  nd::NdArray<T> log_variance;
};

/// v = 0 selects the posterior variance, v = 1 selects beta[t].
template <typename T>
ReverseMoments<T> reverse_moments(const NoiseSchedule& s, const nd::NdArray<T>& x_t, int t,
                                  const nd::NdArray<T>& eps_hat, const nd::NdArray<T>& v_hat);

/// Variance used by the reverse step at (t, v).
double interpolated_variance(const NoiseSchedule& s, int t, double v);

/// One ancestral step for a batch sharing timestep t; rngs[i] drives chain i.
/// The t = 1 step adds no noise and clamps the result to [-1, 1].
nd::NdArray<float> reverse_step(const NoiseSchedule& s, const denoiser::Checkpoint& model, const nd::NdArray<float>& x_t,
                                int t, std::span<Rng> rngs);

/// Pixelwise KL( q(x_{t-1} | x_t, x0) || N(mean, exp(log_variance)) ) in bits.
template <typename T>
nd::NdArray<T> gaussian_kl_bits(const NoiseSchedule& s, const nd::NdArray<T>& x0, const nd::NdArray<T>& x_t, int t,
                                const nd::NdArray<T>& mean, const nd::NdArray<T>& log_variance);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 16;
  std::size_t steps = 8000;
  double ema_decay = 0.999;
  double vlb_weight = 0.001;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  /// 0 disables intermediate checkpoints.
  std::size_t checkpoint_every = 1000;

  void validate() const;
  nlohmann::json to_json() const;
  /// Fields absent from `j` keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, const std::string& pointer_prefix = "");
};

struct LossValue {
  nd::Var<float> total;
  double simple = 0;
  double vlb = 0;
};

/// Hybrid objective on one batch: mean ||eps - eps_hat||^2 + lambda * L_vlb, with
/// timesteps drawn uniformly from [1, T]. The model mean inside L_vlb is held
/// constant so that term only trains the variance head.
LossValue loss(nd::Tape<float>& tape, const NoiseSchedule& s, const denoiser::DenoiserConfig& config,
               const denoiser::DenoiserParams<float>& params, const nd::NdArray<float>& x0, double vlb_weight,
               Rng& rng);

struct TrainRecord {
  std::size_t step = 0;
  double loss_simple = 0;
  double loss_vlb = 0;
  double learning_rate = 0;
};

struct TrainHooks {
  /// Called every log_every steps with the mean losses of that window.
  std::function<void(const TrainRecord&)> on_log;
  /// Called every checkpoint_every steps with the EMA parameters.
  std::function<void(std::size_t step, const denoiser::DenoiserParams<float>& ema)> on_checkpoint;
};

struct TrainResult {
  denoiser::DenoiserParams<float> ema;
  denoiser::DenoiserParams<float> params;
  /// L_simple of every step, in order.
  std::vector<double> loss_simple;
  std::vector<double> loss_vlb;
};

/// Trains on a fixed pool of patches [N,1,S,S]; batches are drawn with
/// replacement from a stream seeded by config.seed.
TrainResult train(const TrainConfig& config, const denoiser::DenoiserConfig& model_config,
                  const nd::NdArray<float>& data, const TrainHooks& hooks = {});

/// Unconditional samples, x_T ~ N(0, I) then reverse steps T..1. Chain i uses
/// rng.fork(i), so results do not depend on how chains are batched.
nd::NdArray<float> generate(const NoiseSchedule& s, const denoiser::Checkpoint& model, std::size_t n, const Rng& rng,
                            std::size_t batch = 16);

/// Median of a sequence (mean of the two middle values for even length).
double median(std::vector<double> values);

}  // namespace repaintlab::diffusion
