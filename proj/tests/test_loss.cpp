#include <gtest/gtest.h>

#include <cmath>

#include "didfuse/loss.hpp"
#include "gradcheck.hpp"

using namespace didfuse;
using gradcheck::Tape;
using gradcheck::Var;

namespace {

Tensor<double> rnd(const Shape& s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor<double>(s, rng, lo, hi);
}

double sq_sum(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Image as_image(const Tensor<double>& t, std::size_t n = 0) { return channel_image(t, n, 0); }

double oracle_ssim(const Tensor<double>& x, const Tensor<double>& y) {
  double acc = 0;
  for (std::size_t n = 0; n < x.shape().n; ++n) acc += oracle::ssim(as_image(x, n), as_image(y, n));
  return acc / x.shape().n;
}

}  // namespace

TEST(Decomposition, IdenticalMapsGiveZero) {
  Tape t;
  const auto b = rnd({1, 3, 4, 4}, 1, -1, 1), d = rnd({1, 3, 4, 4}, 2, -1, 1);
  const auto r = decomposition_loss(t.constant(b), t.constant(b), t.constant(d), t.constant(d), 0.05);
  EXPECT_EQ(r.value.value().item(), 0.0);
}

TEST(Decomposition, SaturatedDetailGapApproachesMinusAlpha1) {
  Tape t;
  const auto b = rnd({1, 3, 8, 8}, 3, -1, 1);
  const auto dv = rnd({1, 3, 8, 8}, 4, -1, 1);
  Tensor<double> di(dv.shape());
  for (std::size_t i = 0; i < di.numel(); ++i) di[i] = -dv[i] + (dv[i] > 0 ? -0.5 : 0.5);
  const auto r = decomposition_loss(t.constant(b), t.constant(b), t.constant(dv), t.constant(di), 0.05, Reduction::kSum);
  EXPECT_NEAR(r.value.value().item(), -0.05, 1e-9);
}

TEST(Decomposition, MatchesScalarRecomputation) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Shape sh{1, 2, 3, 3};
    const auto bv = rnd(sh, 10 + s, -0.2, 0.2), bi = rnd(sh, 20 + s, -0.2, 0.2);
    const auto dv = rnd(sh, 30 + s, -0.2, 0.2), di = rnd(sh, 40 + s, -0.2, 0.2);
    for (Reduction red : {Reduction::kSum, Reduction::kMean}) {
      Tape t;
      const auto r = decomposition_loss(t.constant(bv), t.constant(bi), t.constant(dv), t.constant(di), 0.05, red);
      const double k = red == Reduction::kSum ? 1.0 : 1.0 / sh.numel();
      const double bg = std::tanh(k * sq_sum(bv, bi)), dg = std::tanh(k * sq_sum(dv, di));
      EXPECT_NEAR(r.base_gap.value().item(), bg, 1e-9);
      EXPECT_NEAR(r.detail_gap.value().item(), dg, 1e-9);
      EXPECT_NEAR(r.value.value().item(), bg - 0.05 * dg, 1e-9);
      EXPECT_GE(bg, 0.0);
      EXPECT_LT(bg, 1.0);
    }
  }
}

TEST(Decomposition, RejectsShapeMismatch) {
  Tape t;
  EXPECT_THROW(decomposition_loss(t.constant(rnd({1, 2, 3, 3}, 1)), t.constant(rnd({1, 2, 3, 4}, 2)),
                                  t.constant(rnd({1, 2, 3, 3}, 3)), t.constant(rnd({1, 2, 3, 3}, 4)), 0.05),
               ShapeError);
}

TEST(Ssim, SelfSimilarityIsOne) {
  Tape t;
  const auto x = rnd({2, 1, 14, 13}, 5);
  EXPECT_NEAR(ssim(t.constant(x), t.constant(x)).value().item(), 1.0, 1e-12);
}

TEST(Ssim, ConstantImages) {
  Tape t;
  const Tensor<double> a(Shape{1, 1, 12, 12}, 0.5), b(Shape{1, 1, 12, 12}, 0.8);
  EXPECT_NEAR(ssim(t.constant(a), t.constant(a)).value().item(), 1.0, 1e-12);
  const double v = ssim(t.constant(a), t.constant(b)).value().item();
  EXPECT_GT(v, 0.0);
  EXPECT_LT(v, 1.0);
  // luminance term only: (2*0.4 + C1) / (0.25 + 0.64 + C1)
  EXPECT_NEAR(v, (2 * 0.5 * 0.8 + 1e-4) / (0.25 + 0.64 + 1e-4), 1e-12);
}

TEST(Ssim, MatchesWindowedOracle) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Tape t;
    const auto x = rnd({2, 1, 13, 15}, 50 + s), y = rnd({2, 1, 13, 15}, 60 + s);
    EXPECT_NEAR(ssim(t.constant(x), t.constant(y)).value().item(), oracle_ssim(x, y), 1e-6);
  }
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  Tape t;
  const auto x = rnd({1, 1, 10, 12}, 1);
  EXPECT_THROW(ssim(t.constant(x), t.constant(x)), ShapeError);
}

TEST(Fidelity, ZeroForIdenticalAndPureSquaredErrorAtLambdaZero) {
  Tape t;
  const auto x = rnd({1, 1, 12, 12}, 7), y = rnd({1, 1, 12, 12}, 8);
  EXPECT_NEAR(fidelity(t.constant(x), t.constant(x), 5.0).value().item(), 0.0, 1e-12);
  EXPECT_NEAR(fidelity(t.constant(x), t.constant(y), 0.0).value().item(), sq_sum(x, y), 1e-9);
}

TEST(Fidelity, EqualsIndependentComponents) {
  Tape t;
  const auto x = rnd({2, 1, 12, 12}, 9), y = rnd({2, 1, 12, 12}, 10);
  const double want = sq_sum(x, y) + 5.0 * (1.0 - oracle_ssim(x, y)) / 2.0;
  EXPECT_NEAR(fidelity(t.constant(x), t.constant(y), 5.0).value().item(), want, 1e-6);
  EXPECT_GE(fidelity(t.constant(x), t.constant(y), 5.0).value().item(), 0.0);
}

TEST(GradientPenalty, Examples) {
  Tape t;
  const auto v = rnd({1, 1, 5, 5}, 11);
  EXPECT_EQ(gradient_penalty(t.constant(v), t.constant(v)).value().item(), 0.0);
  EXPECT_EQ(gradient_penalty(t.constant(Tensor<double>(Shape{1, 1, 4, 4}, 0.3)),
                             t.constant(Tensor<double>(Shape{1, 1, 4, 4}, 0.9)))
                .value()
                .item(),
            0.0);
  Tensor<double> ramp(Shape{1, 1, 4, 4});
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) ramp(0, 0, y, x) = x / 4.0;
  EXPECT_NEAR(gradient_penalty(t.constant(ramp), t.constant(Tensor<double>(Shape{1, 1, 4, 4}, 0.5))).value().item(), 3.0,
              1e-12);
  // mean reduction divides by the 24 difference entries
  EXPECT_NEAR(gradient_penalty(t.constant(ramp), t.constant(Tensor<double>(Shape{1, 1, 4, 4}, 0.5)), Reduction::kMean)
                  .value()
                  .item(),
              3.0 / 24.0, 1e-12);
}

TEST(GradientPenalty, NonNegativeAndZeroOnlyForEqualGradients) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tape t;
    const auto a = rnd({1, 1, 5, 6}, 100 + s), b = rnd({1, 1, 5, 6}, 200 + s);
    EXPECT_GT(gradient_penalty(t.constant(a), t.constant(b)).value().item(), 0.0);
  }
}

namespace {

struct Fixture {
  Tape tape;
  LossInputs<double> in;

  explicit Fixture(std::uint64_t seed, bool perfect = false) {
    const Shape img{2, 1, 12, 12}, feat{2, 3, 12, 12};
    const auto ir = rnd(img, seed), vis = rnd(img, seed + 1);
    in.ir = tape.constant(ir);
    in.vis = tape.constant(vis);
    in.ir_hat = perfect ? in.ir : tape.constant(rnd(img, seed + 2));
    in.vis_hat = perfect ? in.vis : tape.constant(rnd(img, seed + 3));
    const auto b = rnd(feat, seed + 4, -0.1, 0.1), d = rnd(feat, seed + 5, -0.1, 0.1);
    in.fp_ir.base = tape.constant(b);
    in.fp_ir.detail = tape.constant(d);
    in.fp_vis.base = perfect ? in.fp_ir.base : tape.constant(rnd(feat, seed + 6, -0.1, 0.1));
    in.fp_vis.detail = perfect ? in.fp_ir.detail : tape.constant(rnd(feat, seed + 7, -0.1, 0.1));
  }
};

}  // namespace

TEST(TotalLoss, PerfectReconstructionIsZero) {
  Fixture f(1, true);
  EXPECT_NEAR(total_loss(f.in, LossConfig{}).total.value().item(), 0.0, 1e-12);
}

TEST(TotalLoss, BreakdownRecombinesToTotal) {
  for (Reduction red : {Reduction::kSum, Reduction::kMean})
    for (LossVariant v : {LossVariant::kFull, LossVariant::kNoBase, LossVariant::kNoDetail, LossVariant::kNoDecomp}) {
      Fixture f(30);
      LossConfig cfg;
      cfg.variant = v;
      cfg.reduction = red;
      const auto terms = total_loss(f.in, cfg);
      const auto bd = terms.breakdown();
      EXPECT_NEAR(bd.total, combine(bd, cfg), 1e-9);
      // parts recomputed independently
      const double ssim_ir = oracle_ssim(f.in.ir.value(), f.in.ir_hat.value());
      const double k = red == Reduction::kSum ? 1.0 : 1.0 / f.in.ir.value().numel();
      EXPECT_NEAR(bd.recon_ir, k * sq_sum(f.in.ir.value(), f.in.ir_hat.value()) + 5.0 * (1 - ssim_ir) / 2, 1e-6);
    }
}

TEST(TotalLoss, NoDecompEqualsFullMinusDecomposition) {
  Fixture f(40);
  LossConfig full, nd;
  nd.variant = LossVariant::kNoDecomp;
  const auto a = total_loss(f.in, full).breakdown();
  const double b = total_loss(f.in, nd).total.value().item();
  EXPECT_NEAR(b, a.total - (a.base_gap - full.alpha1 * a.detail_gap), 1e-9);
}

TEST(TotalLoss, VariantsEqualFullWithCoefficientsZeroed) {
  Fixture f(50);
  LossConfig full;
  const auto bd = total_loss(f.in, full).breakdown();
  LossConfig nb;
  nb.variant = LossVariant::kNoBase;
  EXPECT_NEAR(total_loss(f.in, nb).total.value().item(), bd.total - bd.base_gap, 1e-9);
  LossConfig ndt;
  ndt.variant = LossVariant::kNoDetail;
  EXPECT_NEAR(total_loss(f.in, ndt).total.value().item(), bd.total + full.alpha1 * bd.detail_gap, 1e-9);
  LossConfig zero_a1 = full;
  zero_a1.alpha1 = 0.0;
  EXPECT_NEAR(total_loss(f.in, zero_a1).total.value().item(), total_loss(f.in, ndt).total.value().item(), 1e-9);
}

TEST(TotalLoss, ClassicAeUsesSingleStream) {
  Fixture f(60);
  LossConfig cfg;
  cfg.variant = LossVariant::kClassicAe;
  EXPECT_THROW(total_loss(f.in, cfg), std::invalid_argument);
  LossInputs<double> single;
  single.ir = f.in.ir;
  single.ir_hat = f.in.ir_hat;
  const auto bd = total_loss(single, cfg).breakdown();
  const double want = cfg.alpha2 * fidelity(f.in.ir, f.in.ir_hat, cfg.lambda, cfg.reduction).value().item() +
                      cfg.alpha4 * gradient_penalty(f.in.ir, f.in.ir_hat, cfg.reduction).value().item();
  EXPECT_NEAR(bd.total, want, 1e-9);
  LossInputs<double> missing = f.in;
  missing.vis = Var();
  EXPECT_THROW(total_loss(missing, LossConfig{}), std::invalid_argument);
}

TEST(TotalLoss, BoundsOfDecompositionTerm) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Fixture f(70 + 10 * s);
    const auto bd = total_loss(f.in, LossConfig{}).breakdown();
    const double l1 = bd.base_gap - 0.05 * bd.detail_gap;
    EXPECT_GT(l1, -0.05);
    EXPECT_LT(l1, 1.0);
    EXPECT_GE(bd.recon_vis, 0.0);
    EXPECT_GE(bd.grad_term, 0.0);
  }
}

TEST(TotalLoss, GradientThroughTotalMatchesFiniteDifferences) {
  const Shape img{1, 1, 12, 12}, feat{1, 2, 12, 12};
  std::vector<Tensor<double>> inputs = {rnd(img, 1), rnd(img, 2), rnd(feat, 3, -0.3, 0.3), rnd(feat, 4, -0.3, 0.3)};
  const auto ir = rnd(img, 5), vis = rnd(img, 6);
  const auto bi = rnd(feat, 7, -0.3, 0.3), di = rnd(feat, 8, -0.3, 0.3);
  gradcheck::Builder b = [&](Tape& t, const std::vector<Var>& v) {
    LossInputs<double> in;
    in.ir = t.constant(ir);
    in.vis = t.constant(vis);
    in.ir_hat = v[0];
    in.vis_hat = v[1];
    in.fp_vis.base = v[2];
    in.fp_vis.detail = v[3];
    in.fp_ir.base = t.constant(bi);
    in.fp_ir.detail = t.constant(di);
    LossConfig cfg;
    return total_loss(in, cfg).total;
  };
  gradcheck::Worst w;
  EXPECT_LT(gradcheck::max_error(b, inputs, 1e-4, 1e-6, &w), 1e-4)
      << "input " << w.input << " entry " << w.index << " analytic " << w.analytic << " numeric " << w.numeric;
}

TEST(LossConfigStrings, RoundTrip) {
  for (LossVariant v : {LossVariant::kFull, LossVariant::kNoBase, LossVariant::kNoDetail, LossVariant::kNoDecomp,
                        LossVariant::kClassicAe})
    EXPECT_EQ(parse_loss_variant(to_string(v)), v);
  EXPECT_EQ(parse_reduction("mean"), Reduction::kMean);
  EXPECT_THROW(parse_loss_variant("nope"), std::invalid_argument);
  const LossConfig c;
  EXPECT_EQ(c.alpha1, 0.05);
  EXPECT_EQ(c.alpha2, 2.0);
  EXPECT_EQ(c.alpha3, 2.0);
  EXPECT_EQ(c.alpha4, 10.0);
  EXPECT_EQ(c.lambda, 5.0);
}
