#include "didfuse/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "didfuse/kernels.hpp"

namespace didfuse::metrics {
namespace {

void require_nonempty(const Image& img) {
  if (img.empty()) throw std::invalid_argument("metric on an empty image");
}

void require_same(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw ShapeError("metric operands differ in size");
}

Image to_255(const Image& img) {
  Image out = img;
  for (double& v : out.pixels) v *= 255.0;
  return out;
}

Image decimate(const Image& img) {
  Image out((img.height + 1) / 2, (img.width + 1) / 2);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = img.at(2 * y, 2 * x);
  return out;
}

Image product(const Image& a, const Image& b) {
  Image out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) out.pixels[i] = a.pixels[i] * b.pixels[i];
  return out;
}

}  // namespace

void MetricReport::check_ranges() const {
  auto bad = [](double v) { return !std::isfinite(v); };
  if (bad(en) || en < 0.0 || en > 8.0 + 1e-12) throw std::logic_error("EN out of [0,8]");
  if (bad(sd) || sd < 0.0) throw std::logic_error("SD negative");
  if (bad(sf) || sf < 0.0) throw std::logic_error("SF negative");
  if (bad(ag) || ag < 0.0) throw std::logic_error("AG negative");
  if (bad(vif)) throw std::logic_error("VIF not finite");
  if (bad(scd) || scd < -2.0 - 1e-12 || scd > 2.0 + 1e-12) throw std::logic_error("SCD out of [-2,2]");
}

int quantize(double v) {
  return static_cast<int>(std::clamp(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5), 0.0, 255.0));
}

double entropy(const Image& img) {
  require_nonempty(img);
  std::array<double, 256> hist{};
  for (double v : img.pixels) hist[quantize(v)] += 1.0;
  double en = 0.0;
  for (double h : hist) {
    if (h == 0.0) continue;
    const double p = h / static_cast<double>(img.size());
    en -= p * std::log2(p);
  }
  return en;
}

double std_dev(const Image& img) {
  require_nonempty(img);
  double mean = 0.0;
  for (double v : img.pixels) mean += v * 255.0;
  mean /= static_cast<double>(img.size());
  double sq = 0.0;
  for (double v : img.pixels) sq += (v * 255.0 - mean) * (v * 255.0 - mean);
  return std::sqrt(sq / static_cast<double>(img.size()));
}

double spatial_frequency(const Image& img) {
  require_nonempty(img);
  double hs = 0.0, vs = 0.0;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 1; x < img.width; ++x) {
      const double d = 255.0 * (img.at(y, x) - img.at(y, x - 1));
      hs += d * d;
    }
  for (std::size_t y = 1; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double d = 255.0 * (img.at(y, x) - img.at(y - 1, x));
      vs += d * d;
    }
  const double hn = static_cast<double>(img.height * (img.width - 1));
  const double vn = static_cast<double>((img.height - 1) * img.width);
  const double hg = hn > 0 ? std::sqrt(hs / hn) : 0.0;
  const double vg = vn > 0 ? std::sqrt(vs / vn) : 0.0;
  return std::sqrt(hg * hg + vg * vg);
}

double avg_gradient(const Image& img) {
  require_nonempty(img);
  if (img.height < 2 || img.width < 2) return 0.0;
  double acc = 0.0;
  for (std::size_t y = 1; y < img.height; ++y)
    for (std::size_t x = 1; x < img.width; ++x) {
      const double gh = 255.0 * (img.at(y, x) - img.at(y, x - 1));
      const double gv = 255.0 * (img.at(y, x) - img.at(y - 1, x));
      acc += std::sqrt((gh * gh + gv * gv) / 2.0);
    }
  return acc / static_cast<double>((img.height - 1) * (img.width - 1));
}

double vif_single(const Image& reference, const Image& distorted, const VifConfig& cfg) {
  require_nonempty(reference);
  require_same(reference, distorted);
  if (cfg.scales < 1) throw std::invalid_argument("VIF needs at least one scale");
  Image ref = to_255(reference), dist = to_255(distorted);
  double num = 0.0, den = 0.0;
  constexpr double kTiny = 1e-10;
  for (int scale = 1; scale <= cfg.scales; ++scale) {
    const int side = (1 << (cfg.scales - scale + 1)) + 1;
    const std::vector<double> win = kernels::gaussian_taps(side, side / 5.0);
    auto fits = [&](const Image& im) { return im.height >= static_cast<std::size_t>(side) && im.width >= static_cast<std::size_t>(side); };
    if (scale > 1) {
      if (!fits(ref)) throw ShapeError("image too small for VIF at scale " + std::to_string(scale));
      ref = decimate(kernels::filter_valid(ref, win));
      dist = decimate(kernels::filter_valid(dist, win));
    }
    if (!fits(ref)) throw ShapeError("image too small for the coarsest VIF window");
    const Image mu1 = kernels::filter_valid(ref, win), mu2 = kernels::filter_valid(dist, win);
    const Image e11 = kernels::filter_valid(product(ref, ref), win);
    const Image e22 = kernels::filter_valid(product(dist, dist), win);
    const Image e12 = kernels::filter_valid(product(ref, dist), win);
    for (std::size_t i = 0; i < mu1.size(); ++i) {
      double s1 = std::max(0.0, e11.pixels[i] - mu1.pixels[i] * mu1.pixels[i]);
      const double s2 = std::max(0.0, e22.pixels[i] - mu2.pixels[i] * mu2.pixels[i]);
      const double s12 = e12.pixels[i] - mu1.pixels[i] * mu2.pixels[i];
      double g = s12 / (s1 + kTiny);
      double sv = s2 - g * s12;
      if (s1 < kTiny) {
        g = 0.0;
        sv = s2;
        s1 = 0.0;
      }
      if (s2 < kTiny) {
        g = 0.0;
        sv = 0.0;
      }
      if (g < 0.0) {
        sv = s2;
        g = 0.0;
      }
      sv = std::max(sv, kTiny);
      num += std::log10(1.0 + g * g * s1 / (sv + cfg.sigma_nsq));
      den += std::log10(1.0 + s1 / cfg.sigma_nsq);
    }
  }
  // A flat reference carries no information; call it fully preserved.
  return den > 0.0 ? num / den : 1.0;
}

double vif(const Image& fused, const Image& ir, const Image& vis, const VifConfig& cfg) {
  return 0.5 * (vif_single(ir, fused, cfg) + vif_single(vis, fused, cfg));
}

double correlation(const Image& a, const Image& b) {
  require_nonempty(a);
  require_same(a, b);
  auto constant = [](const Image& im) {
    return std::all_of(im.pixels.begin(), im.pixels.end(), [&](double v) { return v == im.pixels.front(); });
  };
  if (constant(a) || constant(b)) return 0.0;
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.pixels[i];
    mb += b.pixels[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.pixels[i] - ma, db = b.pixels[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double scd(const Image& fused, const Image& ir, const Image& vis) {
  require_same(fused, ir);
  require_same(fused, vis);
  const Image f = to_255(fused), i = to_255(ir), v = to_255(vis);
  Image f_minus_v(f.height, f.width), f_minus_i(f.height, f.width);
  for (std::size_t k = 0; k < f.size(); ++k) {
    f_minus_v.pixels[k] = f.pixels[k] - v.pixels[k];
    f_minus_i.pixels[k] = f.pixels[k] - i.pixels[k];
  }
  return correlation(f_minus_v, i) + correlation(f_minus_i, v);
}

MetricReport evaluate_all(const Image& fused, const Image& ir, const Image& vis, const VifConfig& cfg) {
  MetricReport r;
  r.en = entropy(fused);
  r.sd = std_dev(fused);
  r.sf = spatial_frequency(fused);
  r.vif = vif(fused, ir, vis, cfg);
  r.ag = avg_gradient(fused);
  r.scd = scd(fused, ir, vis);
  r.check_ranges();
  return r;
}

std::string csv_header() { return "id,en,sd,sf,vif,ag,scd"; }

std::string csv_row(const std::string& id, const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.en, r.sd, r.sf, r.vif, r.ag, r.scd);
  return id + "," + buf;
}

}  // namespace didfuse::metrics
