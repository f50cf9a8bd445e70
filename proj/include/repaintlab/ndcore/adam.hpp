#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "repaintlab/ndcore/ndarray.hpp"
#include "repaintlab/ndcore/tape.hpp"

namespace repaintlab::nd {

/// Named parameter set; ordered by name so iteration is deterministic.
template <typename T>
using ParamMap = std::map<std::string, NdArray<T>>;

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  std::uint64_t steps() const noexcept { return step_; }
  const ParamMap<T>& first_moments() const noexcept { return m_; }
  const ParamMap<T>& second_moments() const noexcept { return v_; }

  /// Applies one update to every parameter that has a gradient.
  /// A non-finite gradient aborts before any parameter is touched.
  void step(ParamMap<T>& params, const GradientMap<T>& grads);

 private:
  AdamConfig config_;
  ParamMap<T> m_;
  ParamMap<T> v_;
  std::uint64_t step_ = 0;
};

/// ema <- decay * ema + (1 - decay) * params
template <typename T>
void ema_update(ParamMap<T>& ema, const ParamMap<T>& params, double decay);

}  // namespace repaintlab::nd
