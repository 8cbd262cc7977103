// OpenMP kernels against their serial references. Run with OMP_NUM_THREADS
// set to compare thread counts.

#include <benchmark/benchmark.h>

#include <random>

#include "didfuse/kernels.hpp"

using namespace didfuse;

namespace {

Tensor<float> random_tensor(const Shape& s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  Tensor<float> t(s);
  for (float& v : t.data()) v = u(rng);
  return t;
}

struct ConvCase {
  Tensor<float> x, k, go;
  std::vector<float> bias;

  explicit ConvCase(const benchmark::State& state) {
    const auto c = static_cast<std::size_t>(state.range(0));
    const auto hw = static_cast<std::size_t>(state.range(1));
    x = random_tensor(Shape{4, c, hw, hw}, 1);
    k = random_tensor(Shape{c, c, 3, 3}, 2);
    go = random_tensor(Shape{4, c, hw, hw}, 3);
    bias.assign(c, 0.1f);
  }
};

template <bool Parallel>
void conv_forward(benchmark::State& state) {
  ConvCase cs(state);
  Tensor<float> out;
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::conv3x3_forward<float>(cs.x, cs.k, cs.bias, Padding::kZero, out);
    else
      kernels::reference::conv3x3_forward<float>(cs.x, cs.k, cs.bias, Padding::kZero, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(cs.x.numel()));
}

template <bool Parallel>
void conv_backward(benchmark::State& state) {
  ConvCase cs(state);
  std::vector<float> gx(cs.x.numel()), gk(cs.k.numel()), gb(cs.bias.size());
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::conv3x3_backward<float>(cs.x, cs.k, Padding::kZero, cs.go.data(), gx, gk, gb);
    else
      kernels::reference::conv3x3_backward<float>(cs.x, cs.k, Padding::kZero, cs.go.data(), gx, gk, gb);
    benchmark::DoNotOptimize(gx.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(cs.x.numel()));
}

template <bool Parallel>
void box(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(n, n);
  for (double& v : img.pixels) v = u(rng);
  for (auto _ : state) {
    Image out = Parallel ? kernels::box_filter(img, 5) : kernels::reference::box_filter(img, 5);
    benchmark::DoNotOptimize(out.pixels.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(img.size()));
}

}  // namespace

BENCHMARK(conv_forward<true>)->Name("conv3x3_forward/omp")->Args({16, 64})->Args({64, 128});
BENCHMARK(conv_forward<false>)->Name("conv3x3_forward/serial")->Args({16, 64})->Args({64, 128});
BENCHMARK(conv_backward<true>)->Name("conv3x3_backward/omp")->Args({16, 64})->Args({64, 128});
BENCHMARK(conv_backward<false>)->Name("conv3x3_backward/serial")->Args({16, 64})->Args({64, 128});
BENCHMARK(box<true>)->Name("box_filter/omp")->Arg(256)->Arg(512);
BENCHMARK(box<false>)->Name("box_filter/serial")->Arg(256)->Arg(512);

BENCHMARK_MAIN();
