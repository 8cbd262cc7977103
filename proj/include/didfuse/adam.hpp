#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace didfuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment estimates for an ordered list of parameter arrays.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;
  AdamConfig config;
};

template <typename T>
AdamState<T> make_adam_state(std::span<const std::size_t> sizes, AdamConfig config = {});

// One bias-corrected Adam update of every parameter array; increments t.
template <typename T>
void adam_step(std::span<const std::span<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state,
               double lr);

}  // namespace didfuse
