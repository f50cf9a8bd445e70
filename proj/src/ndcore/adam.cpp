#include "repaintlab/ndcore/adam.hpp"

#include <cmath>

namespace repaintlab::nd {

template <typename T>
void Adam<T>::step(ParamMap<T>& params, const GradientMap<T>& grads) {
  for (const auto& [name, g] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) throw Error("adam: gradient for unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) {
      throw ShapeError("adam", name, shape_str(g.shape()) + " vs parameter " + shape_str(it->second.shape()));
    }
    if (!g.all_finite()) throw NonFiniteError("adam: non-finite gradient for parameter '" + name + "'");
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double lr = config_.learning_rate;
  const double eps = config_.eps;
  for (const auto& [name, g] : grads) {
    auto& p = params.at(name);
    auto [mit, m_new] = m_.try_emplace(name, g.shape());
    auto [vit, v_new] = v_.try_emplace(name, g.shape());
    auto& m = mit->second;
    auto& v = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      p[i] = static_cast<T>(p[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
    }
  }
}

template <typename T>
void ema_update(ParamMap<T>& ema, const ParamMap<T>& params, double decay) {
  for (const auto& [name, p] : params) {
    auto it = ema.find(name);
    if (it == ema.end()) {
      ema.emplace(name, p);
      continue;
    }
    auto& e = it->second;
    for (std::size_t i = 0; i < p.size(); ++i) e[i] = static_cast<T>(decay * e[i] + (1.0 - decay) * p[i]);
  }
}

template class Adam<float>;
template class Adam<double>;
template void ema_update(ParamMap<float>&, const ParamMap<float>&, double);
template void ema_update(ParamMap<double>&, const ParamMap<double>&, double);

}  // namespace repaintlab::nd
