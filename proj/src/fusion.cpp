#include "didfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "didfuse/kernels.hpp"

namespace didfuse::fusion {

std::string to_string(SamStrategy s) {
  switch (s) {
    case SamStrategy::kL1: return "l1";
    case SamStrategy::kSaliency: return "saliency";
    case SamStrategy::kWeighted: return "average";
  }
  return "saliency";
}

SamStrategy parse_sam(const std::string& s) {
  if (s == "l1") return SamStrategy::kL1;
  if (s == "saliency") return SamStrategy::kSaliency;
  if (s == "average" || s == "weighted") return SamStrategy::kWeighted;
  throw std::invalid_argument("unknown spatial attention strategy '" + s + "' (expected l1|saliency|average)");
}

void FusionConfig::validate() const {
  auto in_unit = [](double g) { return g >= 0.0 && g <= 1.0; };
  if (std::abs(gamma1 + gamma2 - 1.0) > 1e-9 || std::abs(gamma3 + gamma4 - 1.0) > 1e-9) {
    throw std::invalid_argument("fusion weights must satisfy gamma1+gamma2 = gamma3+gamma4 = 1");
  }
  if (!in_unit(gamma1) || !in_unit(gamma2) || !in_unit(gamma3) || !in_unit(gamma4)) {
    throw std::invalid_argument("fusion weights must lie in [0,1]");
  }
  if (gf_radius < 1) throw std::invalid_argument("guided filter radius must be >= 1");
  if (!(gf_eps > 0.0)) throw std::invalid_argument("guided filter eps must be positive");
  if (sal_bins < 2) throw std::invalid_argument("saliency histogram needs >= 2 bins");
}

std::string FusionConfig::describe() const {
  std::ostringstream os;
  os << "sam=" << to_string(sam) << " cam=" << (use_cam ? "on" : "off") << " gamma=" << gamma1 << "," << gamma2
     << "," << gamma3 << "," << gamma4 << " gf_radius=" << gf_radius << " gf_eps=" << gf_eps
     << " sal_bins=" << sal_bins;
  return os.str();
}

namespace {

void require_same(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("fusion operands differ in shape: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

double ratio_or_half(double num, double den) { return den != 0.0 ? num / den : 0.5; }

// Convex combination w*a + (1-w)*b, kept inside [min(a,b), max(a,b)] and
// exact when a == b.
double blend(double a, double b, double w_a, double w_b) {
  if (a == b) return a;
  const double v = w_a * a + w_b * b;
  return std::clamp(v, std::min(a, b), std::max(a, b));
}

}  // namespace

Image saliency_map(const Image& channel, int bins, double lo, double hi) {
  if (bins < 2) throw std::invalid_argument("saliency histogram needs >= 2 bins");
  Image out(channel.height, channel.width);
  if (channel.empty()) return out;
  const double step = (hi - lo) / bins;
  auto bin_of = [&](double v) {
    const auto b = static_cast<long>(std::floor((v - lo) / step));
    return static_cast<int>(std::clamp<long>(b, 0, bins - 1));
  };
  std::vector<double> hist(bins, 0.0);
  std::vector<int> idx(channel.size());
  for (std::size_t i = 0; i < channel.size(); ++i) {
    idx[i] = bin_of(channel.pixels[i]);
    hist[idx[i]] += 1.0;
  }
  for (double& h : hist) h /= static_cast<double>(channel.size());
  // Per-bin saliency: distance between bin centers is |i - k| * step.
  std::vector<double> per_bin(bins, 0.0);
  for (int i = 0; i < bins; ++i) {
    double s = 0.0;
    for (int k = 0; k < bins; ++k) {
      if (hist[k] != 0.0) s += hist[k] * std::abs(i - k) * step;
    }
    per_bin[i] = s;
  }
  for (std::size_t i = 0; i < channel.size(); ++i) out.pixels[i] = per_bin[idx[i]];
  return out;
}

Image box_blur(const Image& src) { return kernels::box_filter(src, 1); }

Image guided_filter(const Image& p, const Image& guide, int radius, double eps) {
  if (p.height != guide.height || p.width != guide.width) throw ShapeError("guided filter: input/guide size mismatch");
  if (radius < 1) throw std::invalid_argument("guided filter radius must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("guided filter eps must be positive");
  const std::size_t n = p.size();
  Image ip(p.height, p.width), ii(p.height, p.width);
  for (std::size_t i = 0; i < n; ++i) {
    ip.pixels[i] = guide.pixels[i] * p.pixels[i];
    ii.pixels[i] = guide.pixels[i] * guide.pixels[i];
  }
  const Image mean_i = kernels::box_filter(guide, radius);
  const Image mean_p = kernels::box_filter(p, radius);
  const Image corr_ip = kernels::box_filter(ip, radius);
  const Image corr_ii = kernels::box_filter(ii, radius);
  Image a(p.height, p.width), b(p.height, p.width);
  for (std::size_t i = 0; i < n; ++i) {
    const double var = corr_ii.pixels[i] - mean_i.pixels[i] * mean_i.pixels[i];
    const double cov = corr_ip.pixels[i] - mean_i.pixels[i] * mean_p.pixels[i];
    a.pixels[i] = cov / (var + eps);
    b.pixels[i] = mean_p.pixels[i] - a.pixels[i] * mean_i.pixels[i];
  }
  const Image mean_a = kernels::box_filter(a, radius);
  const Image mean_b = kernels::box_filter(b, radius);
  Image out(p.height, p.width);
  for (std::size_t i = 0; i < n; ++i) out.pixels[i] = mean_a.pixels[i] * guide.pixels[i] + mean_b.pixels[i];
  return out;
}

Tensor<double> l1_weights(const Tensor<double>& f_ir, const Tensor<double>& f_vis) {
  require_same(f_ir, f_vis);
  const Shape& s = f_ir.shape();
  Tensor<double> w(Shape{s.n, 1, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    Image act_ir(s.h, s.w), act_vis(s.h, s.w);
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* a = f_ir.plane(n, c);
      const double* b = f_vis.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        act_ir.pixels[i] += std::abs(a[i]);
        act_vis.pixels[i] += std::abs(b[i]);
      }
    }
    const Image psi_ir = box_blur(act_ir), psi_vis = box_blur(act_vis);
    double* out = w.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      out[i] = ratio_or_half(psi_ir.pixels[i], psi_ir.pixels[i] + psi_vis.pixels[i]);
    }
  }
  return w;
}

Tensor<double> saliency_weights(const Tensor<double>& f_ir, const Tensor<double>& f_vis, const FusionConfig& cfg) {
  require_same(f_ir, f_vis);
  cfg.validate();
  const Shape& s = f_ir.shape();
  Tensor<double> w(s);
  const std::ptrdiff_t planes = s.n * s.c;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t p = 0; p < planes; ++p) {
    const std::size_t n = p / s.c, c = p % s.c;
    const Image ch_ir = channel_image(f_ir, n, c), ch_vis = channel_image(f_vis, n, c);
    const Image s_ir = saliency_map(ch_ir, cfg.sal_bins), s_vis = saliency_map(ch_vis, cfg.sal_bins);
    Image w_ir(s.h, s.w), w_vis(s.h, s.w);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double den = s_ir.pixels[i] + s_vis.pixels[i];
      w_ir.pixels[i] = ratio_or_half(s_ir.pixels[i], den);
      w_vis.pixels[i] = ratio_or_half(s_vis.pixels[i], den);
    }
    const Image chi_ir = guided_filter(w_ir, ch_ir, cfg.gf_radius, cfg.gf_eps);
    const Image chi_vis = guided_filter(w_vis, ch_vis, cfg.gf_radius, cfg.gf_eps);
    double* out = w.plane(n, c);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      const double r = ratio_or_half(chi_ir.pixels[i], chi_ir.pixels[i] + chi_vis.pixels[i]);
      out[i] = std::isfinite(r) ? std::clamp(r, 0.0, 1.0) : 0.5;
    }
  }
  return w;
}

std::vector<double> cam_weights(const Tensor<double>& f_ir, const Tensor<double>& f_vis) {
  require_same(f_ir, f_vis);
  const Shape& s = f_ir.shape();
  std::vector<double> w(s.n * s.c);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      double act_ir = 0.0, act_vis = 0.0;
      const double* a = f_ir.plane(n, c);
      const double* b = f_vis.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        act_ir += std::abs(a[i]);
        act_vis += std::abs(b[i]);
      }
      act_ir /= static_cast<double>(s.plane());
      act_vis /= static_cast<double>(s.plane());
      w[n * s.c + c] = ratio_or_half(act_ir, act_ir + act_vis);
    }
  return w;
}

Tensor<double> sam_l1(const Tensor<double>& f_ir, const Tensor<double>& f_vis) {
  const Tensor<double> w = l1_weights(f_ir, f_vis);
  const Shape& s = f_ir.shape();
  Tensor<double> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* a = f_ir.plane(n, c);
      const double* b = f_vis.plane(n, c);
      const double* wp = w.plane(n, 0);
      double* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = blend(a[i], b[i], wp[i], 1.0 - wp[i]);
    }
  return out;
}

Tensor<double> sam_saliency(const Tensor<double>& f_ir, const Tensor<double>& f_vis, const FusionConfig& cfg) {
  const Tensor<double> w = saliency_weights(f_ir, f_vis, cfg);
  Tensor<double> out(f_ir.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = blend(f_ir[i], f_vis[i], w[i], 1.0 - w[i]);
  return out;
}

Tensor<double> sam_weighted(const Tensor<double>& f_ir, const Tensor<double>& f_vis, double gamma_ir,
                            double gamma_vis) {
  require_same(f_ir, f_vis);
  Tensor<double> out(f_ir.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = blend(f_ir[i], f_vis[i], gamma_ir, gamma_vis);
  return out;
}

Tensor<double> cam(const Tensor<double>& f_ir, const Tensor<double>& f_vis) {
  const std::vector<double> w = cam_weights(f_ir, f_vis);
  const Shape& s = f_ir.shape();
  Tensor<double> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double wc = w[n * s.c + c];
      const double* a = f_ir.plane(n, c);
      const double* b = f_vis.plane(n, c);
      double* o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = blend(a[i], b[i], wc, 1.0 - wc);
    }
  return out;
}

Tensor<double> fuse_map(const Tensor<double>& f_ir, const Tensor<double>& f_vis, const FusionConfig& cfg,
                        bool is_base) {
  cfg.validate();
  require_same(f_ir, f_vis);
  Tensor<double> spa;
  switch (cfg.sam) {
    case SamStrategy::kL1: spa = sam_l1(f_ir, f_vis); break;
    case SamStrategy::kSaliency: spa = sam_saliency(f_ir, f_vis, cfg); break;
    case SamStrategy::kWeighted:
      spa = is_base ? sam_weighted(f_ir, f_vis, cfg.gamma1, cfg.gamma2)
                    : sam_weighted(f_ir, f_vis, cfg.gamma3, cfg.gamma4);
      break;
  }
  if (!cfg.use_cam) return spa;
  const Tensor<double> cha = cam(f_ir, f_vis);
  Tensor<double> out(spa.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (spa[i] + cha[i]) * 0.5;
  return out;
}

FusedFeatures fuse_features(const FeatureMaps<double>& ir, const FeatureMaps<double>& vis, const FusionConfig& cfg) {
  if (ir.base.empty() != vis.base.empty() || ir.detail.empty() != vis.detail.empty()) {
    throw ShapeError("fusion inputs come from networks with different branches");
  }
  if (!ir.base.empty() && !ir.detail.empty() && ir.base.shape() != ir.detail.shape()) {
    throw ShapeError("base and detail widths differ");
  }
  FusedFeatures out;
  if (!ir.base.empty()) out.base = fuse_map(ir.base, vis.base, cfg, true);
  if (!ir.detail.empty()) out.detail = fuse_map(ir.detail, vis.detail, cfg, false);
  return out;
}

}  // namespace didfuse::fusion
