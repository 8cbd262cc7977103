#pragma once

// Brute-force reimplementations used as test oracles. These deliberately avoid
// the library's kernels: every window is visited explicitly and padding is
// resolved pixel by pixel.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "didfuse/autodiff.hpp"
#include "didfuse/image.hpp"
#include "didfuse/tensor.hpp"

namespace oracle {

using didfuse::Image;
using didfuse::Padding;
using didfuse::Shape;
using didfuse::Tensor;

inline Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(h, w);
  for (double& v : img.pixels) v = u(rng);
  return img;
}

template <typename T>
Tensor<T> random_tensor(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (T& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// Mirror without repeating the edge: -1 -> 1, n -> n-2.
inline long mirror(long i, long n) {
  if (i < 0) return -i;
  if (i > n - 1) return 2 * (n - 1) - i;
  return i;
}

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Tensor<T>& k, const std::vector<T>& bias, Padding pad) {
  const Shape s = x.shape();
  const std::size_t oc = k.shape().n;
  Tensor<T> out(Shape{s.n, oc, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < oc; ++o)
      for (long y = 0; y < static_cast<long>(s.h); ++y)
        for (long xx = 0; xx < static_cast<long>(s.w); ++xx) {
          double acc = bias[o];
          for (std::size_t c = 0; c < s.c; ++c)
            for (long dy = -1; dy <= 1; ++dy)
              for (long dx = -1; dx <= 1; ++dx) {
                long yy = y + dy, xs = xx + dx;
                double v;
                if (pad == Padding::kZero) {
                  if (yy < 0 || xs < 0 || yy >= static_cast<long>(s.h) || xs >= static_cast<long>(s.w)) continue;
                  v = x(n, c, yy, xs);
                } else {
                  v = x(n, c, mirror(yy, s.h), mirror(xs, s.w));
                }
                acc += v * static_cast<double>(k(o, c, dy + 1, dx + 1));
              }
          out(n, o, y, xx) = static_cast<T>(acc);
        }
  return out;
}

inline Image box(const Image& src, int r) {
  Image out(src.height, src.width);
  const long h = src.height, w = src.width;
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) acc += src.at(std::clamp(y + dy, 0L, h - 1), std::clamp(x + dx, 0L, w - 1));
      out.at(y, x) = acc / ((2 * r + 1) * (2 * r + 1));
    }
  return out;
}

// Guided filter with every window statistic computed by direct summation.
inline Image guided_filter(const Image& p, const Image& g, int r, double eps) {
  const long h = p.height, w = p.width;
  auto window = [&](long y, long x, auto&& fn) {
    for (long dy = -r; dy <= r; ++dy)
      for (long dx = -r; dx <= r; ++dx) fn(std::clamp(y + dy, 0L, h - 1), std::clamp(x + dx, 0L, w - 1));
  };
  const double cnt = (2.0 * r + 1) * (2.0 * r + 1);
  Image a(h, w), b(h, w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double mi = 0, mp = 0, mii = 0, mip = 0;
      window(y, x, [&](long yy, long xx) {
        mi += g.at(yy, xx);
        mp += p.at(yy, xx);
        mii += g.at(yy, xx) * g.at(yy, xx);
        mip += g.at(yy, xx) * p.at(yy, xx);
      });
      mi /= cnt;
      mp /= cnt;
      mii /= cnt;
      mip /= cnt;
      a.at(y, x) = (mip - mi * mp) / (mii - mi * mi + eps);
      b.at(y, x) = mp - a.at(y, x) * mi;
    }
  Image out(h, w);
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double ma = 0, mb = 0;
      window(y, x, [&](long yy, long xx) {
        ma += a.at(yy, xx);
        mb += b.at(yy, xx);
      });
      out.at(y, x) = ma / cnt * g.at(y, x) + mb / cnt;
    }
  return out;
}

// Histogram-contrast saliency by comparing every pixel with every other pixel
// through the quantized bin centers.
inline Image saliency(const Image& img, int bins, double lo = -1.0, double hi = 1.0) {
  const double step = (hi - lo) / bins;
  auto center = [&](double v) {
    int b = static_cast<int>(std::floor((v - lo) / step));
    b = std::clamp(b, 0, bins - 1);
    return lo + (b + 0.5) * step;
  };
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < img.size(); ++j) s += std::abs(center(img.pixels[i]) - center(img.pixels[j]));
    out.pixels[i] = s / static_cast<double>(img.size());
  }
  return out;
}

inline std::vector<double> gaussian_2d(int size, double sigma) {
  std::vector<double> w(size * size);
  double total = 0.0;
  const double c = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) {
      w[i * size + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      total += w[i * size + j];
    }
  for (double& v : w) v /= total;
  return w;
}

// Mean SSIM over every valid window position of a single image pair.
inline double ssim(const Image& x, const Image& y, int size = 11, double sigma = 1.5, double c1 = 1e-4,
                   double c2 = 9e-4) {
  const auto g = gaussian_2d(size, sigma);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + size <= x.height; ++r)
    for (std::size_t c = 0; c + size <= x.width; ++c) {
      double mx = 0, my = 0;
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          mx += g[i * size + j] * x.at(r + i, c + j);
          my += g[i * size + j] * y.at(r + i, c + j);
        }
      double vx = 0, vy = 0, cxy = 0;
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          const double dx = x.at(r + i, c + j) - mx, dy = y.at(r + i, c + j) - my;
          vx += g[i * size + j] * dx * dx;
          vy += g[i * size + j] * dy * dy;
          cxy += g[i * size + j] * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / static_cast<double>(count);
}

inline int level(double v) {
  const double s = std::clamp(v, 0.0, 1.0) * 255.0;
  const double f = std::floor(s);
  return static_cast<int>(s - f >= 0.5 ? f + 1 : f);
}

inline double entropy(const Image& img) {
  std::map<int, int> counts;
  for (double v : img.pixels) counts[level(v)]++;
  double e = 0.0;
  for (const auto& [lv, n] : counts) {
    const double p = static_cast<double>(n) / img.size();
    e += -p * std::log(p) / std::log(2.0);
  }
  return e;
}

inline double std_dev(const Image& img) {
  // Variance as E[x^2] - E[x]^2 accumulated in long double.
  long double s = 0, s2 = 0;
  for (double v : img.pixels) {
    s += 255.0L * v;
    s2 += (255.0L * v) * (255.0L * v);
  }
  const long double n = img.size();
  const long double var = s2 / n - (s / n) * (s / n);
  return static_cast<double>(std::sqrt(std::max(0.0L, var)));
}

inline double spatial_frequency(const Image& img) {
  double rf = 0, cf = 0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x + 1 < img.width; ++x) rf += std::pow(255.0 * (img.at(y, x + 1) - img.at(y, x)), 2);
  for (std::size_t y = 0; y + 1 < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) cf += std::pow(255.0 * (img.at(y + 1, x) - img.at(y, x)), 2);
  rf /= img.height * (img.width - 1.0);
  cf /= (img.height - 1.0) * img.width;
  return std::sqrt(rf + cf);
}

inline double avg_gradient(const Image& img) {
  double acc = 0;
  for (std::size_t y = 0; y + 1 < img.height; ++y)
    for (std::size_t x = 0; x + 1 < img.width; ++x) {
      const double dx = 255.0 * (img.at(y + 1, x + 1) - img.at(y + 1, x));
      const double dy = 255.0 * (img.at(y + 1, x + 1) - img.at(y, x + 1));
      acc += std::sqrt(0.5 * (dx * dx + dy * dy));
    }
  return acc / ((img.height - 1.0) * (img.width - 1.0));
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = a.size();
  double sa = 0, sb = 0, sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
  }
  const double ma = sa / n, mb = sb / n;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline double scd(const Image& f, const Image& i, const Image& v) {
  std::vector<double> d1, d2, ii, vv;
  for (std::size_t k = 0; k < f.size(); ++k) {
    d1.push_back(255.0 * (f.pixels[k] - v.pixels[k]));
    d2.push_back(255.0 * (f.pixels[k] - i.pixels[k]));
    ii.push_back(255.0 * i.pixels[k]);
    vv.push_back(255.0 * v.pixels[k]);
  }
  return pearson(d1, ii) + pearson(d2, vv);
}

// Pixel-domain VIF with explicit 2-D Gaussian windows.
inline double vif_single(Image ref, Image dist, int scales, double sigma_nsq = 2.0) {
  for (double& v : ref.pixels) v *= 255.0;
  for (double& v : dist.pixels) v *= 255.0;
  auto filt = [](const Image& im, const std::vector<double>& g, int n) {
    Image o(im.height - n + 1, im.width - n + 1);
    for (std::size_t y = 0; y < o.height; ++y)
      for (std::size_t x = 0; x < o.width; ++x) {
        double acc = 0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) acc += g[i * n + j] * im.at(y + i, x + j);
        o.at(y, x) = acc;
      }
    return o;
  };
  double num = 0, den = 0;
  for (int s = 1; s <= scales; ++s) {
    const int n = (1 << (scales - s + 1)) + 1;
    const auto g = gaussian_2d(n, n / 5.0);
    if (s > 1) {
      const Image fr = filt(ref, g, n), fd = filt(dist, g, n);
      Image r2((fr.height + 1) / 2, (fr.width + 1) / 2), d2(r2.height, r2.width);
      for (std::size_t y = 0; y < r2.height; ++y)
        for (std::size_t x = 0; x < r2.width; ++x) {
          r2.at(y, x) = fr.at(2 * y, 2 * x);
          d2.at(y, x) = fd.at(2 * y, 2 * x);
        }
      ref = r2;
      dist = d2;
    }
    for (std::size_t y = 0; y + n <= ref.height; ++y)
      for (std::size_t x = 0; x + n <= ref.width; ++x) {
        double m1 = 0, m2 = 0, e11 = 0, e22 = 0, e12 = 0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const double wgt = g[i * n + j], a = ref.at(y + i, x + j), b = dist.at(y + i, x + j);
            m1 += wgt * a;
            m2 += wgt * b;
            e11 += wgt * a * a;
            e22 += wgt * b * b;
            e12 += wgt * a * b;
          }
        double s1 = std::max(0.0, e11 - m1 * m1), s2 = std::max(0.0, e22 - m2 * m2);
        const double s12 = e12 - m1 * m2;
        double gain = s12 / (s1 + 1e-10), sv = s2 - gain * s12;
        if (s1 < 1e-10) {
          gain = 0;
          sv = s2;
          s1 = 0;
        }
        if (s2 < 1e-10) {
          gain = 0;
          sv = 0;
        }
        if (gain < 0) {
          sv = s2;
          gain = 0;
        }
        sv = std::max(sv, 1e-10);
        num += std::log10(1 + gain * gain * s1 / (sv + sigma_nsq));
        den += std::log10(1 + s1 / sigma_nsq);
      }
  }
  return den > 0 ? num / den : 1.0;
}

// Central differences of a scalar function of several tensors.
using ScalarFn = std::function<double(const std::vector<Tensor<double>>&)>;

inline std::vector<std::vector<double>> finite_diff(const ScalarFn& f, std::vector<Tensor<double>> inputs,
                                                    double h = 1e-6) {
  std::vector<std::vector<double>> out;
  for (auto& t : inputs) {
    std::vector<double> g(t.numel());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double keep = t[i];
      t[i] = keep + h;
      const double fp = f(inputs);
      t[i] = keep - h;
      const double fm = f(inputs);
      t[i] = keep;
      g[i] = (fp - fm) / (2 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline double rel_error(double a, double n, double floor = 1e-7) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace oracle
