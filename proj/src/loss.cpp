#include "didfuse/loss.hpp"

#include <stdexcept>

#include "didfuse/kernels.hpp"

namespace didfuse {

std::string to_string(LossVariant v) {
  switch (v) {
    case LossVariant::kFull: return "full";
    case LossVariant::kNoBase: return "no-base";
    case LossVariant::kNoDetail: return "no-detail";
    case LossVariant::kNoDecomp: return "no-decomp";
    case LossVariant::kClassicAe: return "classic-ae";
  }
  return "full";
}

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "full") return LossVariant::kFull;
  if (s == "no-base" || s == "no_base") return LossVariant::kNoBase;
  if (s == "no-detail" || s == "no_detail") return LossVariant::kNoDetail;
  if (s == "no-decomp" || s == "no_decomp") return LossVariant::kNoDecomp;
  if (s == "classic-ae" || s == "classic_ae") return LossVariant::kClassicAe;
  throw std::invalid_argument("unknown loss variant '" + s + "'");
}

std::string to_string(Reduction r) { return r == Reduction::kSum ? "sum" : "mean"; }

Reduction parse_reduction(const std::string& s) {
  if (s == "sum") return Reduction::kSum;
  if (s == "mean") return Reduction::kMean;
  throw std::invalid_argument("unknown loss reduction '" + s + "' (expected sum|mean)");
}

namespace {

template <typename T>
ad::Var<T> reduce(const ad::Var<T>& v, Reduction r) {
  return r == Reduction::kSum ? ad::sum(v) : ad::mean(v);
}

template <typename T>
ad::Var<T> squared_norm(const ad::Var<T>& a, const ad::Var<T>& b, Reduction r) {
  if (a.shape() != b.shape()) {
    throw ShapeError("squared norm of mismatched shapes " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  ad::Var<T> d = ad::sub(a, b);
  return reduce(ad::mul(d, d), r);
}

}  // namespace

template <typename T>
DecompositionTerms<T> decomposition_loss(const ad::Var<T>& base_vis, const ad::Var<T>& base_ir,
                                         const ad::Var<T>& detail_vis, const ad::Var<T>& detail_ir, double alpha1,
                                         Reduction reduction) {
  if (base_vis.shape() != base_ir.shape() || detail_vis.shape() != detail_ir.shape() ||
      base_vis.shape() != detail_vis.shape()) {
    throw ShapeError("decomposition loss needs four feature maps of one shape");
  }
  DecompositionTerms<T> t;
  t.base_gap = ad::tanh(squared_norm(base_vis, base_ir, reduction));
  t.detail_gap = ad::tanh(squared_norm(detail_vis, detail_ir, reduction));
  t.value = ad::sub(t.base_gap, ad::scale(t.detail_gap, static_cast<T>(alpha1)));
  return t;
}

template <typename T>
ad::Var<T> ssim(const ad::Var<T>& x, const ad::Var<T>& y, const SsimConfig& cfg) {
  if (x.shape() != y.shape()) {
    throw ShapeError("ssim of mismatched shapes " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  const auto win = static_cast<std::size_t>(cfg.window);
  if (x.shape().h < win || x.shape().w < win) {
    throw ShapeError("ssim needs images of at least " + std::to_string(win) + "x" + std::to_string(win) + ", got " +
                     to_string(x.shape()));
  }
  const std::vector<double> taps = kernels::gaussian_taps(cfg.window, cfg.sigma);
  auto blur = [&](const ad::Var<T>& v) { return ad::filter_valid(v, taps, taps); };
  const T c1 = static_cast<T>(cfg.c1), c2 = static_cast<T>(cfg.c2);

  ad::Var<T> mu_x = blur(x), mu_y = blur(y);
  ad::Var<T> mu_xx = ad::mul(mu_x, mu_x), mu_yy = ad::mul(mu_y, mu_y), mu_xy = ad::mul(mu_x, mu_y);
  ad::Var<T> s_xx = ad::sub(blur(ad::mul(x, x)), mu_xx);
  ad::Var<T> s_yy = ad::sub(blur(ad::mul(y, y)), mu_yy);
  ad::Var<T> s_xy = ad::sub(blur(ad::mul(x, y)), mu_xy);

  ad::Var<T> num = ad::mul(ad::add_scalar(ad::scale(mu_xy, T{2}), c1), ad::add_scalar(ad::scale(s_xy, T{2}), c2));
  ad::Var<T> den = ad::mul(ad::add_scalar(ad::add(mu_xx, mu_yy), c1), ad::add_scalar(ad::add(s_xx, s_yy), c2));
  return ad::mean(ad::div(num, den));
}

template <typename T>
ad::Var<T> fidelity(const ad::Var<T>& x, const ad::Var<T>& x_hat, double lambda, Reduction reduction) {
  ad::Var<T> sq = squared_norm(x, x_hat, reduction);
  // lambda * (1 - ssim) / 2
  ad::Var<T> l_ssim = ad::scale(ad::add_scalar(ad::scale(ssim(x, x_hat), T{-1}), T{1}), static_cast<T>(lambda / 2));
  return ad::add(sq, l_ssim);
}

template <typename T>
ad::Var<T> gradient_penalty(const ad::Var<T>& v, const ad::Var<T>& v_hat, Reduction reduction) {
  if (v.shape() != v_hat.shape()) {
    throw ShapeError("gradient penalty of mismatched shapes " + to_string(v.shape()) + " vs " +
                     to_string(v_hat.shape()));
  }
  ad::Var<T> gx = ad::sum(ad::abs(ad::sub(ad::diff_x(v), ad::diff_x(v_hat))));
  ad::Var<T> gy = ad::sum(ad::abs(ad::sub(ad::diff_y(v), ad::diff_y(v_hat))));
  ad::Var<T> total = ad::add(gx, gy);
  if (reduction == Reduction::kMean) {
    const Shape& s = v.shape();
    const double count = static_cast<double>(s.n * s.c * (s.h * (s.w - 1) + (s.h - 1) * s.w));
    total = ad::scale(total, static_cast<T>(1.0 / count));
  }
  return total;
}

template <typename T>
LossBreakdown LossTerms<T>::breakdown() const {
  auto val = [](const ad::Var<T>& v) { return v.defined() ? static_cast<double>(v.value().item()) : 0.0; };
  return {val(base_gap), val(detail_gap), val(recon_ir), val(recon_vis), val(grad_term), val(total)};
}

double combine(const LossBreakdown& p, const LossConfig& cfg) {
  switch (cfg.variant) {
    case LossVariant::kFull:
      return p.base_gap - cfg.alpha1 * p.detail_gap + cfg.alpha2 * p.recon_ir + cfg.alpha3 * p.recon_vis +
             cfg.alpha4 * p.grad_term;
    case LossVariant::kNoBase:
      return -cfg.alpha1 * p.detail_gap + cfg.alpha2 * p.recon_ir + cfg.alpha3 * p.recon_vis + cfg.alpha4 * p.grad_term;
    case LossVariant::kNoDetail:
      return p.base_gap + cfg.alpha2 * p.recon_ir + cfg.alpha3 * p.recon_vis + cfg.alpha4 * p.grad_term;
    case LossVariant::kNoDecomp:
      return cfg.alpha2 * p.recon_ir + cfg.alpha3 * p.recon_vis + cfg.alpha4 * p.grad_term;
    case LossVariant::kClassicAe:
      return cfg.alpha2 * p.recon_ir + cfg.alpha4 * p.grad_term;
  }
  return 0.0;
}

template <typename T>
LossTerms<T> total_loss(const LossInputs<T>& in, const LossConfig& cfg) {
  LossTerms<T> t;
  const Reduction r = cfg.reduction;
  const auto w = [](double v) { return static_cast<T>(v); };
  if (!in.ir.defined() || !in.ir_hat.defined()) throw std::invalid_argument("loss needs the first image and its reconstruction");

  if (cfg.variant == LossVariant::kClassicAe) {
    if (in.vis.defined() || in.vis_hat.defined()) {
      throw std::invalid_argument("classic-ae loss takes a single image stream, got two");
    }
    t.recon_ir = fidelity(in.ir, in.ir_hat, cfg.lambda, r);
    t.grad_term = gradient_penalty(in.ir, in.ir_hat, r);
    t.total = ad::add(ad::scale(t.recon_ir, w(cfg.alpha2)), ad::scale(t.grad_term, w(cfg.alpha4)));
    return t;
  }
  if (!in.vis.defined() || !in.vis_hat.defined()) {
    throw std::invalid_argument("loss variant " + to_string(cfg.variant) + " needs both image streams");
  }
  const bool use_base = cfg.variant == LossVariant::kFull || cfg.variant == LossVariant::kNoDetail;
  const bool use_detail = cfg.variant == LossVariant::kFull || cfg.variant == LossVariant::kNoBase;
  if (use_base && (!in.fp_ir.base.defined() || !in.fp_vis.base.defined())) {
    throw std::invalid_argument("loss variant " + to_string(cfg.variant) + " needs base feature maps");
  }
  if (use_detail && (!in.fp_ir.detail.defined() || !in.fp_vis.detail.defined())) {
    throw std::invalid_argument("loss variant " + to_string(cfg.variant) + " needs detail feature maps");
  }

  t.recon_ir = fidelity(in.ir, in.ir_hat, cfg.lambda, r);
  t.recon_vis = fidelity(in.vis, in.vis_hat, cfg.lambda, r);
  t.grad_term = gradient_penalty(in.vis, in.vis_hat, r);
  ad::Var<T> total = ad::add(ad::add(ad::scale(t.recon_ir, w(cfg.alpha2)), ad::scale(t.recon_vis, w(cfg.alpha3))),
                             ad::scale(t.grad_term, w(cfg.alpha4)));
  if (use_base) {
    t.base_gap = ad::tanh(squared_norm(in.fp_vis.base, in.fp_ir.base, r));
    total = ad::add(t.base_gap, total);
  }
  if (use_detail) {
    t.detail_gap = ad::tanh(squared_norm(in.fp_vis.detail, in.fp_ir.detail, r));
    total = ad::sub(total, ad::scale(t.detail_gap, w(cfg.alpha1)));
  }
  t.total = total;
  return t;
}

#define DIDFUSE_INSTANTIATE(T)                                                                                     \
  template DecompositionTerms<T> decomposition_loss(const ad::Var<T>&, const ad::Var<T>&, const ad::Var<T>&,      \
                                                    const ad::Var<T>&, double, Reduction);                        \
  template ad::Var<T> ssim(const ad::Var<T>&, const ad::Var<T>&, const SsimConfig&);                               \
  template ad::Var<T> fidelity(const ad::Var<T>&, const ad::Var<T>&, double, Reduction);                           \
  template ad::Var<T> gradient_penalty(const ad::Var<T>&, const ad::Var<T>&, Reduction);                           \
  template struct LossTerms<T>;                                                                                    \
  template LossTerms<T> total_loss(const LossInputs<T>&, const LossConfig&);

DIDFUSE_INSTANTIATE(float)
DIDFUSE_INSTANTIATE(double)

#undef DIDFUSE_INSTANTIATE

}  // namespace didfuse
