#include "didfuse/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace didfuse {

template <typename T>
AdamState<T> make_adam_state(std::span<const std::size_t> sizes, AdamConfig config) {
  AdamState<T> s;
  s.config = config;
  for (std::size_t n : sizes) {
    s.m.emplace_back(n, T{0});
    s.v.emplace_back(n, T{0});
  }
  return s;
}

template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state,
               double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam: parameter, gradient and state counts differ");
  }
  const AdamConfig& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<T> p = params[k];
    std::span<const T> g = grads[k];
    std::vector<T>& m = state.m[k];
    std::vector<T>& v = state.v[k];
    if (p.size() != g.size() || p.size() != m.size()) {
      throw std::invalid_argument("adam: parameter " + std::to_string(k) + " length mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.eps);
      p[i] = static_cast<T>(p[i] - step);
    }
  }
}

template AdamState<float> make_adam_state(std::span<const std::size_t>, AdamConfig);
template AdamState<double> make_adam_state(std::span<const std::size_t>, AdamConfig);
template void adam_step(std::span<const std::span<float>>, std::span<const std::span<const float>>,
                        AdamState<float>&, double);
template void adam_step(std::span<const std::span<double>>, std::span<const std::span<const double>>,
                        AdamState<double>&, double);

}  // namespace didfuse
