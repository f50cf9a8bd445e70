#include "repaintlab/diffusion/ddpm.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "repaintlab/error.hpp"

namespace repaintlab::diffusion {

namespace {

constexpr double kLn2 = std::numbers::ln2;

template <typename T>
T clamp_unit(double v) {
  return static_cast<T>(std::clamp(v, -1.0, 1.0));
}

void check_batch(const char* op, const nd::Shape& shape, std::size_t count) {
  if (shape.empty()) throw ShapeError(op, "N", "expected a batch, got a scalar");
  if (shape[0] != count)
    throw ShapeError(op, "N", "batch of " + std::to_string(shape[0]) + " with " + std::to_string(count) + " timesteps");
}

void check_same(const char* op, const nd::Shape& a, const nd::Shape& b) {
  if (a != b) throw ShapeError(op, "all", nd::shape_str(a) + " vs " + nd::shape_str(b));
}

/// KL of one pixel and its derivative with respect to the model log-variance.
struct PixelKl {
  double kl;
  double d_log_variance;
};

PixelKl pixel_kl(double true_mean, double true_log_var, double mean, double log_var) {
  const double diff = true_mean - mean;
  const double ratio = std::exp(true_log_var - log_var);
  const double maha = diff * diff * std::exp(-log_var);
  return {0.5 * (-1.0 + log_var - true_log_var + ratio + maha) / kLn2, 0.5 * (1.0 - ratio - maha) / kLn2};
}

}  // namespace

void NoiseSchedule::check_step(int t, const char* op) const {
  if (t < 1 || t > T)
    throw Error(std::string(op) + ": timestep " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
}

NoiseSchedule cosine_schedule(int T) {
  if (T < 1) throw ConfigError("/timesteps", "need at least one step, got " + std::to_string(T));
  const auto f = [T](int t) {
    const double c = std::cos((static_cast<double>(t) / T + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2);
    return c * c;
  };
  const auto n = static_cast<std::size_t>(T) + 1;
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.posterior_variance.assign(n, 0.0);
  s.posterior_log_variance_clipped.assign(n, 0.0);
  s.posterior_coef_x0.assign(n, 0.0);
  s.posterior_coef_xt.assign(n, 0.0);
  const double f0 = f(0);
  for (int t = 1; t <= T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    s.beta[i] = std::min(1.0 - (f(t) / f0) / (f(t - 1) / f0), kMaxBeta);
    s.alpha[i] = 1.0 - s.beta[i];
    // product of the clipped alphas, so the closed form and the chained kernel agree
    s.alpha_bar[i] = s.alpha_bar[i - 1] * s.alpha[i];
    const double prev = s.alpha_bar[i - 1];
    const double one_minus = 1.0 - s.alpha_bar[i];
    s.posterior_variance[i] = s.beta[i] * (1.0 - prev) / one_minus;
    s.posterior_coef_x0[i] = s.beta[i] * std::sqrt(prev) / one_minus;
    s.posterior_coef_xt[i] = (1.0 - prev) * std::sqrt(s.alpha[i]) / one_minus;
  }
  for (std::size_t i = 1; i < n; ++i) {
    double v = s.posterior_variance[i];
    if (i == 1) v = T >= 2 ? s.posterior_variance[2] : s.beta[1];
    s.posterior_log_variance_clipped[i] = std::log(v);
  }
  return s;
}

template <typename T>
nd::NdArray<T> q_sample(const NoiseSchedule& s, const nd::NdArray<T>& x0, std::span<const int> t,
                        const nd::NdArray<T>& noise) {
  check_same("q_sample", x0.shape(), noise.shape());
  check_batch("q_sample", x0.shape(), t.size());
  auto out = nd::NdArray<T>::uninitialized(x0.shape());
  const std::size_t per = t.empty() ? 0 : x0.size() / t.size();
  for (std::size_t n = 0; n < t.size(); ++n) {
    s.check_step(t[n], "q_sample");
    const double a = std::sqrt(s.alpha_bar[t[n]]);
    const double b = std::sqrt(1.0 - s.alpha_bar[t[n]]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = static_cast<T>(a * x0[i] + b * noise[i]);
  }
  return out;
}

template <typename T>
nd::NdArray<T> q_sample(const NoiseSchedule& s, const nd::NdArray<T>& x0, int t, const nd::NdArray<T>& noise) {
  check_same("q_sample", x0.shape(), noise.shape());
  s.check_step(t, "q_sample");
  const double a = std::sqrt(s.alpha_bar[t]);
  const double b = std::sqrt(1.0 - s.alpha_bar[t]);
  auto out = nd::NdArray<T>::uninitialized(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = static_cast<T>(a * x0[i] + b * noise[i]);
  return out;
}

template <typename T>
nd::NdArray<T> forward_step(const NoiseSchedule& s, const nd::NdArray<T>& x_prev, int t, const nd::NdArray<T>& noise) {
  check_same("forward_step", x_prev.shape(), noise.shape());
  s.check_step(t, "forward_step");
  const double a = std::sqrt(s.alpha[t]);
  const double b = std::sqrt(s.beta[t]);
  auto out = nd::NdArray<T>::uninitialized(x_prev.shape());
  for (std::size_t i = 0; i < x_prev.size(); ++i) out[i] = static_cast<T>(a * x_prev[i] + b * noise[i]);
  return out;
}

double interpolated_variance(const NoiseSchedule& s, int t, double v) {
  s.check_step(t, "interpolated_variance");
  if (v == 1.0) return s.beta[t];
  if (v == 0.0 && t >= 2) return s.posterior_variance[t];
  return std::exp(v * std::log(s.beta[t]) + (1.0 - v) * s.posterior_log_variance_clipped[t]);
}

template <typename T>
ReverseMoments<T> reverse_moments(const NoiseSchedule& s, const nd::NdArray<T>& x_t, int t,
                                  const nd::NdArray<T>& eps_hat, const nd::NdArray<T>& v_hat) {
  check_same("reverse_moments", x_t.shape(), eps_hat.shape());
  check_same("reverse_moments", x_t.shape(), v_hat.shape());
  s.check_step(t, "reverse_moments");
  const double ab = s.alpha_bar[t];
  const double sqrt_ab = std::sqrt(ab), sqrt_one_minus = std::sqrt(1.0 - ab);
  const double log_beta = std::log(s.beta[t]), log_post = s.posterior_log_variance_clipped[t];
  ReverseMoments<T> m{nd::NdArray<T>::uninitialized(x_t.shape()), nd::NdArray<T>::uninitialized(x_t.shape()),
                      nd::NdArray<T>::uninitialized(x_t.shape())};
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double x0 = std::clamp((x_t[i] - sqrt_one_minus * eps_hat[i]) / sqrt_ab, -1.0, 1.0);
    m.x0_hat[i] = static_cast<T>(x0);
    m.mean[i] = static_cast<T>(s.posterior_coef_x0[t] * x0 + s.posterior_coef_xt[t] * x_t[i]);
    m.log_variance[i] = static_cast<T>(v_hat[i] * log_beta + (1.0 - v_hat[i]) * log_post);
  }
  return m;
}

nd::NdArray<float> reverse_step(const NoiseSchedule& s, const denoiser::Checkpoint& model, const nd::NdArray<float>& x_t,
                                int t, std::span<Rng> rngs) {
  s.check_step(t, "reverse_step");
  if (static_cast<std::size_t>(s.T) != model.config.timesteps)
    throw ConfigError("/timesteps", "schedule has " + std::to_string(s.T) + " steps, model expects " +
                                        std::to_string(model.config.timesteps));
  check_batch("reverse_step", x_t.shape(), rngs.size());
  const std::vector<int> steps(rngs.size(), t);
  denoiser::PredictionValues<float> pred;
  try {
    pred = denoiser::predict(model.config, model.params, x_t, steps);
  } catch (const NonFiniteError& e) {
    throw NonFiniteError("reverse step at t=" + std::to_string(t) + ": " + e.what());
  }
  const auto m = reverse_moments(s, x_t, t, pred.eps, pred.variance);
  auto out = nd::NdArray<float>::uninitialized(x_t.shape());
  const std::size_t per = x_t.size() / rngs.size();
  for (std::size_t n = 0; n < rngs.size(); ++n) {
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      if (t == 1) {
        out[i] = clamp_unit<float>(m.mean[i]);
      } else {
        const double sd = std::sqrt(interpolated_variance(s, t, pred.variance[i]));
        out[i] = static_cast<float>(m.mean[i] + sd * rngs[n].normal());
      }
    }
  }
  return out;
}

template <typename T>
nd::NdArray<T> gaussian_kl_bits(const NoiseSchedule& s, const nd::NdArray<T>& x0, const nd::NdArray<T>& x_t, int t,
                                const nd::NdArray<T>& mean, const nd::NdArray<T>& log_variance) {
  check_same("gaussian_kl_bits", x0.shape(), x_t.shape());
  check_same("gaussian_kl_bits", x0.shape(), mean.shape());
  check_same("gaussian_kl_bits", x0.shape(), log_variance.shape());
  s.check_step(t, "gaussian_kl_bits");
  nd::NdArray<T> out(x0.shape());
  if (t == 1) return out;  // the true posterior is a point mass at x0
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double true_mean = s.posterior_coef_x0[t] * x0[i] + s.posterior_coef_xt[t] * x_t[i];
    out[i] = static_cast<T>(pixel_kl(true_mean, s.posterior_log_variance_clipped[t], mean[i], log_variance[i]).kl);
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ConfigError("/learning_rate", "must be positive");
  if (batch_size == 0) throw ConfigError("/batch_size", "must be positive");
  if (!(ema_decay >= 0 && ema_decay < 1)) throw ConfigError("/ema_decay", "must lie in [0, 1)");
  if (!(vlb_weight >= 0 && vlb_weight <= 1)) throw ConfigError("/vlb_weight", "must lie in [0, 1]");
  if (log_every == 0) throw ConfigError("/log_every", "must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"steps", steps},
          {"ema_decay", ema_decay},         {"vlb_weight", vlb_weight}, {"seed", seed},
          {"log_every", log_every},         {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const std::string& pointer_prefix) {
  if (!j.is_object()) throw ConfigError(pointer_prefix.empty() ? "/" : pointer_prefix, "must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    const std::string ptr = pointer_prefix + "/" + key;
    try {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "ema_decay") c.ema_decay = value.get<double>();
      else if (key == "vlb_weight") c.vlb_weight = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "log_every") c.log_every = value.get<std::size_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
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

LossValue loss(nd::Tape<float>& tape, const NoiseSchedule& s, const denoiser::DenoiserConfig& config,
               const denoiser::DenoiserParams<float>& params, const nd::NdArray<float>& x0, double vlb_weight,
               Rng& rng) {
  if (x0.shape().empty() || x0.shape()[0] == 0) throw ShapeError("loss", "N", "empty batch");
  const std::size_t batch = x0.shape()[0];
  const std::size_t per = x0.size() / batch;
  std::vector<int> t(batch);
  for (auto& v : t) v = static_cast<int>(rng.uniform_int(1, s.T));
  auto noise = nd::NdArray<float>::uninitialized(x0.shape());
  rng.fill_normal(noise.span());
  const auto x_t = q_sample(s, x0, t, noise);

  const auto pred = denoiser::forward(tape, config, params, tape.constant(x_t), t);
  const auto simple = nd::ops::mse(pred.eps, noise);

  // variance-only KL: the model mean comes from the current eps prediction as a constant
  const auto& eps = pred.eps.value();
  const auto& v = pred.variance.value();
  auto kl = nd::NdArray<float>::uninitialized(x0.shape());
  auto dkl = nd::NdArray<float>::uninitialized(x0.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const int tn = t[n];
    const std::size_t lo = n * per, hi = lo + per;
    if (tn == 1) {
      std::fill(kl.data() + lo, kl.data() + hi, 0.0f);
      std::fill(dkl.data() + lo, dkl.data() + hi, 0.0f);
      continue;
    }
    const double ab = s.alpha_bar[tn];
    const double sqrt_ab = std::sqrt(ab), sqrt_one_minus = std::sqrt(1.0 - ab);
    const double log_beta = std::log(s.beta[tn]), log_post = s.posterior_log_variance_clipped[tn];
    for (std::size_t i = lo; i < hi; ++i) {
      const double x0_hat = std::clamp((x_t[i] - sqrt_one_minus * eps[i]) / sqrt_ab, -1.0, 1.0);
      const double mean = s.posterior_coef_x0[tn] * x0_hat + s.posterior_coef_xt[tn] * x_t[i];
      const double true_mean = s.posterior_coef_x0[tn] * x0[i] + s.posterior_coef_xt[tn] * x_t[i];
      const double log_var = v[i] * log_beta + (1.0 - v[i]) * log_post;
      const auto p = pixel_kl(true_mean, log_post, mean, log_var);
      kl[i] = static_cast<float>(p.kl);
      dkl[i] = static_cast<float>(p.d_log_variance * (log_beta - log_post));
    }
  }
  const auto vlb = nd::ops::mean(nd::ops::pointwise(pred.variance, std::move(kl), std::move(dkl)));
  LossValue out;
  out.simple = simple.value()[0];
  out.vlb = vlb.value()[0];
  out.total = nd::ops::add(simple, nd::ops::scale(vlb, static_cast<float>(vlb_weight)));
  return out;
}

TrainResult train(const TrainConfig& config, const denoiser::DenoiserConfig& model_config,
                  const nd::NdArray<float>& data, const TrainHooks& hooks) {
  config.validate();
  model_config.validate();
  const auto& shape = data.shape();
  if (shape.size() != 4 || shape[0] == 0 || shape[1] != model_config.in_channels ||
      shape[2] != model_config.input_size || shape[3] != model_config.input_size)
    throw ShapeError("train", "data", "need [N>0, " + std::to_string(model_config.in_channels) + ", " +
                                          std::to_string(model_config.input_size) + ", " +
                                          std::to_string(model_config.input_size) + "], got " + nd::shape_str(shape));
  const auto schedule = cosine_schedule(static_cast<int>(model_config.timesteps));
  const Rng root(config.seed);
  TrainResult result;
  result.params = denoiser::build<float>(model_config, root.fork("denoiser/init").seed());
  result.ema = result.params;
  result.loss_simple.reserve(config.steps);
  result.loss_vlb.reserve(config.steps);
  std::vector<std::string> names;
  for (const auto& [name, _] : result.params) names.push_back(name);

  nd::Adam<float> adam(nd::AdamConfig{config.learning_rate});
  Rng batch_rng = root.fork("train/batches");
  Rng loss_rng = root.fork("train/loss");
  const std::size_t per = data.size() / shape[0];
  nd::Shape batch_shape = shape;
  batch_shape[0] = config.batch_size;
  auto x0 = nd::NdArray<float>::uninitialized(batch_shape);
  double window_simple = 0, window_vlb = 0;
  std::size_t window = 0;

  for (std::size_t step = 1; step <= config.steps; ++step) {
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(batch_rng.uniform_int(0, static_cast<std::int64_t>(shape[0]) - 1));
      std::copy_n(data.data() + idx * per, per, x0.data() + b * per);
    }
    nd::Tape<float> tape;
    const auto l = loss(tape, schedule, model_config, result.params, x0, config.vlb_weight, loss_rng);
    if (!std::isfinite(l.total.value()[0]))
      throw NonFiniteError("training loss became non-finite at step " + std::to_string(step));
    const auto grads = nd::backprop(l.total, names);
    adam.step(result.params, grads);
    nd::ema_update(result.ema, result.params, config.ema_decay);

    result.loss_simple.push_back(l.simple);
    result.loss_vlb.push_back(l.vlb);
    window_simple += l.simple;
    window_vlb += l.vlb;
    ++window;
    if (step % config.log_every == 0) {
      if (hooks.on_log)
        hooks.on_log({step, window_simple / static_cast<double>(window), window_vlb / static_cast<double>(window),
                      config.learning_rate});
      window_simple = window_vlb = 0;
      window = 0;
    }
    if (config.checkpoint_every != 0 && step % config.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(step, result.ema);
  }
  return result;
}

nd::NdArray<float> generate(const NoiseSchedule& s, const denoiser::Checkpoint& model, std::size_t n, const Rng& rng,
                            std::size_t batch) {
  if (batch == 0) throw Error("generate: batch must be positive");
  const std::size_t c = model.config.in_channels, size = model.config.input_size;
  nd::NdArray<float> out({n, c, size, size});
  const std::size_t per = c * size * size;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t count = std::min(batch, n - start);
    std::vector<Rng> chains;
    chains.reserve(count);
    for (std::size_t i = 0; i < count; ++i) chains.push_back(rng.fork(static_cast<std::uint64_t>(start + i)));
    auto x = nd::NdArray<float>::uninitialized({count, c, size, size});
    for (std::size_t i = 0; i < count; ++i) chains[i].fill_normal(std::span<float>(x.data() + i * per, per));
    for (int t = s.T; t >= 1; --t) x = reverse_step(s, model, x, t, chains);
    std::copy_n(x.data(), x.size(), out.data() + start * per);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw Error("median of an empty sequence");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  const double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

#define REPAINTLAB_INSTANTIATE(T)                                                                                   \
  template nd::NdArray<T> q_sample<T>(const NoiseSchedule&, const nd::NdArray<T>&, std::span<const int>,            \
                                      const nd::NdArray<T>&);                                                       \
  template nd::NdArray<T> q_sample<T>(const NoiseSchedule&, const nd::NdArray<T>&, int, const nd::NdArray<T>&);     \
  template nd::NdArray<T> forward_step<T>(const NoiseSchedule&, const nd::NdArray<T>&, int, const nd::NdArray<T>&); \
  template ReverseMoments<T> reverse_moments<T>(const NoiseSchedule&, const nd::NdArray<T>&, int,                   \
                                                const nd::NdArray<T>&, const nd::NdArray<T>&);                      \
  template nd::NdArray<T> gaussian_kl_bits<T>(const NoiseSchedule&, const nd::NdArray<T>&, const nd::NdArray<T>&,   \
                                              int, const nd::NdArray<T>&, const nd::NdArray<T>&);

REPAINTLAB_INSTANTIATE(float)
REPAINTLAB_INSTANTIATE(double)
#undef REPAINTLAB_INSTANTIATE

}  // namespace repaintlab::diffusion
