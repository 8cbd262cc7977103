#include "didfuse/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace didfuse {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);

namespace kernels {
namespace {

template <typename T>
void check_conv_operands(const Shape& x, const Shape& k, std::size_t bias_len, Padding pad) {
  if (k.h != 3 || k.w != 3) throw ShapeError("conv3x3 kernel must be (outC,inC,3,3), got " + to_string(k));
  if (x.c != k.c) {
    throw ShapeError("conv3x3 input " + to_string(x) + " has " + std::to_string(x.c) +
                     " channels but kernel " + to_string(k) + " expects " + std::to_string(k.c));
  }
  if (bias_len != k.n) {
    throw ShapeError("conv3x3 bias has " + std::to_string(bias_len) + " entries for " + std::to_string(k.n) +
                     " output channels");
  }
  if (x.h == 0 || x.w == 0) throw ShapeError("conv3x3 input has empty spatial extent " + to_string(x));
  if (pad == Padding::kReflect && (x.h < 2 || x.w < 2)) {
    throw ShapeError("reflection padding needs h,w >= 2, got " + to_string(x));
  }
}

// Copies every (n,c) plane into a (h+2)x(w+2) buffer with the requested border.
template <typename T>
std::vector<T> pad_planes(const Tensor<T>& x, Padding pad) {
  const Shape& s = x.shape();
  const std::ptrdiff_t h = s.h, w = s.w, hp = h + 2, wp = w + 2;
  const std::ptrdiff_t planes = s.n * s.c;
  std::vector<T> xp(planes * hp * wp, T{0});
  const T* base = x.data().data();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const T* src = base + p * h * w;
    T* dst = xp.data() + p * hp * wp;
    for (std::ptrdiff_t py = 0; py < hp; ++py) {
      const std::ptrdiff_t iy = py - 1;
      for (std::ptrdiff_t px = 0; px < wp; ++px) {
        const std::ptrdiff_t ix = px - 1;
        if (pad == Padding::kZero) {
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) dst[py * wp + px] = src[iy * w + ix];
        } else {
          dst[py * wp + px] = src[reflect_index(iy, h) * w + reflect_index(ix, w)];
        }
      }
    }
  }
  return xp;
}

}  // namespace

template <typename T>
void conv3x3_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::span<const T> bias, Padding pad,
                     Tensor<T>& out) {
  const Shape& s = x.shape();
  check_conv_operands<T>(s, kernel.shape(), bias.size(), pad);
  const std::ptrdiff_t in_c = s.c, out_c = kernel.shape().n, h = s.h, w = s.w, wp = w + 2;
  const std::ptrdiff_t plane_p = (h + 2) * wp;
  out = Tensor<T>(Shape{s.n, static_cast<std::size_t>(out_c), s.h, s.w});
  const std::vector<T> xp = pad_planes(x, pad);
  const T* kdata = kernel.data().data();
  const std::ptrdiff_t jobs = s.n * out_c;

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t job = 0; job < jobs; ++job) {
    const std::ptrdiff_t ni = job / out_c, oc = job % out_c;
    T* o = out.plane(ni, oc);
    std::fill(o, o + h * w, bias[oc]);
    for (std::ptrdiff_t ic = 0; ic < in_c; ++ic) {
      const T* xin = xp.data() + (ni * in_c + ic) * plane_p;
      const T* k = kdata + (oc * in_c + ic) * 9;
      for (std::ptrdiff_t y = 0; y < h; ++y) {
        T* orow = o + y * w;
        for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
          const T* irow = xin + (y + ky) * wp;
          const T k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
          for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
            orow[xx] += k0 * irow[xx] + k1 * irow[xx + 1] + k2 * irow[xx + 2];
          }
        }
      }
    }
  }
}

template <typename T>
void conv3x3_backward(const Tensor<T>& x, const Tensor<T>& kernel, Padding pad, std::span<const T> grad_out,
                      std::span<T> grad_x, std::span<T> grad_kernel, std::span<T> grad_bias) {
  const Shape& s = x.shape();
  const Shape& ks = kernel.shape();
  check_conv_operands<T>(s, ks, ks.n, pad);
  const std::ptrdiff_t n = s.n, in_c = s.c, out_c = ks.n, h = s.h, w = s.w, hp = h + 2, wp = w + 2;
  const std::ptrdiff_t plane = h * w, plane_p = hp * wp;
  if (grad_out.size() != static_cast<std::size_t>(n * out_c * plane)) {
    throw ShapeError("conv3x3 backward: gradient length does not match output shape");
  }
  const T* kdata = kernel.data().data();
  const T* g = grad_out.data();

  if (!grad_x.empty()) {
    const std::ptrdiff_t jobs = n * in_c;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
      const std::ptrdiff_t ni = job / in_c, ic = job % in_c;
      std::vector<T> gp(plane_p, T{0});
      for (std::ptrdiff_t oc = 0; oc < out_c; ++oc) {
        const T* k = kdata + (oc * in_c + ic) * 9;
        const T* gplane = g + (ni * out_c + oc) * plane;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const T* grow = gplane + y * w;
          for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
            for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
              const T kv = k[ky * 3 + kx];
              T* prow = gp.data() + (y + ky) * wp + kx;
              for (std::ptrdiff_t xx = 0; xx < w; ++xx) prow[xx] += kv * grow[xx];
            }
          }
        }
      }
      T* dst = grad_x.data() + (ni * in_c + ic) * plane;
      std::fill(dst, dst + plane, T{0});
      for (std::ptrdiff_t py = 0; py < hp; ++py) {
        const std::ptrdiff_t iy = py - 1;
        for (std::ptrdiff_t px = 0; px < wp; ++px) {
          const std::ptrdiff_t ix = px - 1;
          if (pad == Padding::kZero) {
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) dst[iy * w + ix] += gp[py * wp + px];
          } else {
            dst[reflect_index(iy, h) * w + reflect_index(ix, w)] += gp[py * wp + px];
          }
        }
      }
    }
  }

  if (!grad_kernel.empty()) {
    const std::vector<T> xp = pad_planes(x, pad);
    const std::ptrdiff_t jobs = out_c * in_c;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t job = 0; job < jobs; ++job) {
      const std::ptrdiff_t oc = job / in_c, ic = job % in_c;
      // One partial-sum row per tap keeps the inner loop a plain vector FMA.
      std::vector<T> acc(9 * w, T{0});
      for (std::ptrdiff_t ni = 0; ni < n; ++ni) {
        const T* gplane = g + (ni * out_c + oc) * plane;
        const T* xin = xp.data() + (ni * in_c + ic) * plane_p;
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          const T* grow = gplane + y * w;
          for (std::ptrdiff_t ky = 0; ky < 3; ++ky) {
            for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
              T* a = acc.data() + (ky * 3 + kx) * w;
              const T* src = xin + (y + ky) * wp + kx;
              for (std::ptrdiff_t xx = 0; xx < w; ++xx) a[xx] += grow[xx] * src[xx];
            }
          }
        }
      }
      T* gk = grad_kernel.data() + (oc * in_c + ic) * 9;
      for (std::ptrdiff_t t = 0; t < 9; ++t) {
        T sum{0};
        for (std::ptrdiff_t xx = 0; xx < w; ++xx) sum += acc[t * w + xx];
        gk[t] = sum;
      }
    }
  }

  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t oc = 0; oc < out_c; ++oc) {
      T sum{0};
      for (std::ptrdiff_t ni = 0; ni < n; ++ni) {
        const T* gplane = g + (ni * out_c + oc) * plane;
        for (std::ptrdiff_t i = 0; i < plane; ++i) sum += gplane[i];
      }
      grad_bias[oc] = sum;
    }
  }
}

template <typename T>
void separable_valid_forward(const Tensor<T>& x, std::span<const double> rows, std::span<const double> cols,
                             Tensor<T>& out) {
  const Shape& s = x.shape();
  if (rows.empty() || cols.empty() || s.h < rows.size() || s.w < cols.size()) {
    throw ShapeError("valid filter window larger than input " + to_string(s));
  }
  const std::ptrdiff_t h = s.h, w = s.w, kr = rows.size(), kc = cols.size();
  const std::ptrdiff_t oh = h - kr + 1, ow = w - kc + 1;
  out = Tensor<T>(Shape{s.n, s.c, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  const std::ptrdiff_t planes = s.n * s.c;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const T* src = x.data().data() + p * h * w;
    T* dst = out.data().data() + p * oh * ow;
    std::vector<T> tmp(h * ow, T{0});
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      T* trow = tmp.data() + y * ow;
      for (std::ptrdiff_t j = 0; j < kc; ++j) {
        const T c = static_cast<T>(cols[j]);
        const T* srow = src + y * w + j;
        for (std::ptrdiff_t xx = 0; xx < ow; ++xx) trow[xx] += c * srow[xx];
      }
    }
    for (std::ptrdiff_t y = 0; y < oh; ++y) {
      T* drow = dst + y * ow;
      for (std::ptrdiff_t i = 0; i < kr; ++i) {
        const T r = static_cast<T>(rows[i]);
        const T* trow = tmp.data() + (y + i) * ow;
        for (std::ptrdiff_t xx = 0; xx < ow; ++xx) drow[xx] += r * trow[xx];
      }
    }
  }
}

template <typename T>
void separable_valid_backward(const Shape& s, std::span<const double> rows, std::span<const double> cols,
                              std::span<const T> grad_out, std::span<T> grad_x) {
  const std::ptrdiff_t h = s.h, w = s.w, kr = rows.size(), kc = cols.size();
  const std::ptrdiff_t oh = h - kr + 1, ow = w - kc + 1;
  const std::ptrdiff_t planes = s.n * s.c;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const T* g = grad_out.data() + p * oh * ow;
    T* dst = grad_x.data() + p * h * w;
    std::vector<T> tmp(h * ow, T{0});
    for (std::ptrdiff_t y = 0; y < oh; ++y) {
      const T* grow = g + y * ow;
      for (std::ptrdiff_t i = 0; i < kr; ++i) {
        const T r = static_cast<T>(rows[i]);
        T* trow = tmp.data() + (y + i) * ow;
        for (std::ptrdiff_t xx = 0; xx < ow; ++xx) trow[xx] += r * grow[xx];
      }
    }
    std::fill(dst, dst + h * w, T{0});
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      const T* trow = tmp.data() + y * ow;
      for (std::ptrdiff_t j = 0; j < kc; ++j) {
        const T c = static_cast<T>(cols[j]);
        T* drow = dst + y * w + j;
        for (std::ptrdiff_t xx = 0; xx < ow; ++xx) drow[xx] += c * trow[xx];
      }
    }
  }
}

Image box_filter(const Image& src, int radius) {
  if (radius < 0) throw std::invalid_argument("box filter radius must be non-negative");
  const std::ptrdiff_t h = src.height, w = src.width, r = radius;
  const double inv = 1.0 / static_cast<double>(2 * r + 1);
  Image tmp(h, w), out(h, w);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) s += src.pixels[y * w + std::clamp<std::ptrdiff_t>(x + d, 0, w - 1)];
      tmp.pixels[y * w + x] = s * inv;
    }
  }
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t d = -r; d <= r; ++d) s += tmp.pixels[std::clamp<std::ptrdiff_t>(y + d, 0, h - 1) * w + x];
      out.pixels[y * w + x] = s * inv;
    }
  }
  return out;
}

std::vector<double> gaussian_taps(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw std::invalid_argument("gaussian window size must be odd and positive");
  std::vector<double> taps(size);
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    taps[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

Image filter_valid(const Image& src, std::span<const double> taps) {
  Tensor<double> t(Shape{1, 1, src.height, src.width}, src.pixels);
  Tensor<double> out;
  separable_valid_forward(t, taps, taps, out);
  Image img(out.shape().h, out.shape().w);
  img.pixels = out.vec();
  return img;
}

namespace reference {

template <typename T>
void conv3x3_forward(const Tensor<T>& x, const Tensor<T>& kernel, std::span<const T> bias, Padding pad,
                     Tensor<T>& out) {
  const Shape& s = x.shape();
  check_conv_operands<T>(s, kernel.shape(), bias.size(), pad);
  const std::ptrdiff_t h = s.h, w = s.w;
  const std::size_t out_c = kernel.shape().n;
  out = Tensor<T>(Shape{s.n, out_c, s.h, s.w});
  for (std::size_t ni = 0; ni < s.n; ++ni)
    for (std::size_t oc = 0; oc < out_c; ++oc)
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
          T acc = bias[oc];
          for (std::size_t ic = 0; ic < s.c; ++ic)
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky)
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                std::ptrdiff_t iy = y + ky - 1, ix = xx + kx - 1;
                if (pad == Padding::kZero) {
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                } else {
                  iy = reflect_index(iy, h);
                  ix = reflect_index(ix, w);
                }
                acc += kernel(oc, ic, ky, kx) * x(ni, ic, iy, ix);
              }
          out(ni, oc, y, xx) = acc;
        }
}

template <typename T>
void conv3x3_backward(const Tensor<T>& x, const Tensor<T>& kernel, Padding pad, std::span<const T> grad_out,
                      std::span<T> grad_x, std::span<T> grad_kernel, std::span<T> grad_bias) {
  const Shape& s = x.shape();
  const Shape& ks = kernel.shape();
  check_conv_operands<T>(s, ks, ks.n, pad);
  const std::ptrdiff_t h = s.h, w = s.w;
  std::fill(grad_x.begin(), grad_x.end(), T{0});
  std::fill(grad_kernel.begin(), grad_kernel.end(), T{0});
  std::fill(grad_bias.begin(), grad_bias.end(), T{0});
  for (std::size_t ni = 0; ni < s.n; ++ni)
    for (std::size_t oc = 0; oc < ks.n; ++oc)
      for (std::ptrdiff_t y = 0; y < h; ++y)
        for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
          const T g = grad_out[((ni * ks.n + oc) * h + y) * w + xx];
          if (!grad_bias.empty()) grad_bias[oc] += g;
          for (std::size_t ic = 0; ic < s.c; ++ic)
            for (std::ptrdiff_t ky = 0; ky < 3; ++ky)
              for (std::ptrdiff_t kx = 0; kx < 3; ++kx) {
                std::ptrdiff_t iy = y + ky - 1, ix = xx + kx - 1;
                if (pad == Padding::kZero) {
                  if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                } else {
                  iy = reflect_index(iy, h);
                  ix = reflect_index(ix, w);
                }
                const std::size_t xi = ((ni * s.c + ic) * h + iy) * w + ix;
                const std::size_t ki = ((oc * s.c + ic) * 3 + ky) * 3 + kx;
                if (!grad_kernel.empty()) grad_kernel[ki] += g * x[xi];
                if (!grad_x.empty()) grad_x[xi] += g * kernel[ki];
              }
        }
}

Image box_filter(const Image& src, int radius) {
  const std::ptrdiff_t h = src.height, w = src.width, r = radius;
  const double area = static_cast<double>((2 * r + 1) * (2 * r + 1));
  Image out(h, w);
  for (std::ptrdiff_t y = 0; y < h; ++y)
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx)
          s += src.at(std::clamp<std::ptrdiff_t>(y + dy, 0, h - 1), std::clamp<std::ptrdiff_t>(x + dx, 0, w - 1));
      out.at(y, x) = s / area;
    }
  return out;
}

template void conv3x3_forward(const Tensor<float>&, const Tensor<float>&, std::span<const float>, Padding,
                              Tensor<float>&);
template void conv3x3_forward(const Tensor<double>&, const Tensor<double>&, std::span<const double>, Padding,
                              Tensor<double>&);
template void conv3x3_backward(const Tensor<float>&, const Tensor<float>&, Padding, std::span<const float>,
                               std::span<float>, std::span<float>, std::span<float>);
template void conv3x3_backward(const Tensor<double>&, const Tensor<double>&, Padding, std::span<const double>,
                               std::span<double>, std::span<double>, std::span<double>);

}  // namespace reference

template void conv3x3_forward(const Tensor<float>&, const Tensor<float>&, std::span<const float>, Padding,
                              Tensor<float>&);
template void conv3x3_forward(const Tensor<double>&, const Tensor<double>&, std::span<const double>, Padding,
                              Tensor<double>&);
template void conv3x3_backward(const Tensor<float>&, const Tensor<float>&, Padding, std::span<const float>,
                               std::span<float>, std::span<float>, std::span<float>);
template void conv3x3_backward(const Tensor<double>&, const Tensor<double>&, Padding, std::span<const double>,
                               std::span<double>, std::span<double>, std::span<double>);
template void separable_valid_forward(const Tensor<float>&, std::span<const double>, std::span<const double>,
                                      Tensor<float>&);
template void separable_valid_forward(const Tensor<double>&, std::span<const double>, std::span<const double>,
                                      Tensor<double>&);
template void separable_valid_backward(const Shape&, std::span<const double>, std::span<const double>,
                                       std::span<const float>, std::span<float>);
template void separable_valid_backward(const Shape&, std::span<const double>, std::span<const double>,
                                       std::span<const double>, std::span<double>);

}  // namespace kernels
}  // namespace didfuse
