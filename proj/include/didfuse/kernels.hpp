#pragma once

// Data-parallel inner loops shared by the autodiff ops and the image filters.
// Every kernel has an OpenMP version (namespace kernels) and a plain serial
// reference (namespace kernels::reference) used by the tests and the benchmark.
// The parallel kernels only split work across independent outputs, so each
// output is reduced in a fixed order and results do not depend on thread count.

#include <cstddef>
#include <span>

#include "didfuse/image.hpp"
#include "didfuse/tensor.hpp"

namespace didfuse {

enum class Padding { kReflect, kZero };

namespace kernels {

// Index of the source pixel that padded coordinate `i` (in [-1, n]) reads
// under reflect-101, i.e. -1 -> 1 and n -> n-2. Requires n >= 2.
constexpr std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

// out = bias + correlate(pad(x), kernel), stride 1, padding 1.
// x: (n,inC,h,w), kernel: (outC,inC,3,3), bias: outC values. out is resized.
template <typename T>
void conv3x3_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::span<const T> bias, Padding pad,
                     Tensor<T>& out);

// Gradients of conv3x3_forward. Any of grad_x / grad_kernel / grad_bias may be
// empty to skip it; non-empty outputs are overwritten (not accumulated).
template <typename T>
void conv3x3_backward(const Tensor<T>& x, const Tensor<T>& kernel, Padding pad, std::span<const T> grad_out,
                      std::span<T> grad_x, std::span<T> grad_kernel, std::span<T> grad_bias);

// Separable "valid" correlation of every (n,c) plane: the output plane is
// (h - rows.size() + 1) x (w - cols.size() + 1).
template <typename T>
void separable_valid_forward(const Tensor<T>& x, std::span<const double> rows, std::span<const double> cols,
                             Tensor<T>& out);

// Adjoint of separable_valid_forward; grad_x is overwritten.
template <typename T>
void separable_valid_backward(const Shape& x_shape, std::span<const double> rows, std::span<const double> cols,
                              std::span<const T> grad_out, std::span<T> grad_x);

// Mean over the (2r+1)^2 window with edge replication.
Image box_filter(const Image& src, int radius);

// Normalized 1-D Gaussian taps of odd length `size`.
std::vector<double> gaussian_taps(int size, double sigma);

// Separable valid filtering of a single image.
Image filter_valid(const Image& src, std::span<const double> taps);

namespace reference {

template <typename T>
void conv3x3_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::span<const T> bias, Padding pad,
                     Tensor<T>& out);

template <typename T>
void conv3x3_backward(const Tensor<T>& x, const Tensor<T>& kernel, Padding pad, std::span<const T> grad_out,
                      std::span<T> grad_x, std::span<T> grad_kernel, std::span<T> grad_bias);

Image box_filter(const Image& src, int radius);

}  // namespace reference
}  // namespace kernels
}  // namespace didfuse
