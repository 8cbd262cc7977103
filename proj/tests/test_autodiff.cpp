#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "didfuse/adam.hpp"
#include "gradcheck.hpp"

using namespace didfuse;
using gradcheck::Builder;
using gradcheck::Tape;
using gradcheck::Var;

namespace {

constexpr double kOpTol = 1e-4;

Tensor<double> rnd(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  return oracle::random_tensor<double>(s, rng, lo, hi);
}

// Values bounded away from zero so kinks (abs, PReLU) stay out of the
// finite-difference stencil.
Tensor<double> away_from_zero(const Shape& s, std::uint64_t seed) {
  auto t = rnd(s, seed, 0.1, 1.0);
  std::mt19937_64 rng(seed + 1);
  for (double& v : t.data())
    if (rng() % 2) v = -v;
  return t;
}

}  // namespace

TEST(AutodiffGrad, Conv3x3BothPaddings) {
  for (Padding pad : {Padding::kZero, Padding::kReflect}) {
    Builder b = [pad](Tape& t, const std::vector<Var>& v) {
      return gradcheck::project(t, ad::conv3x3(v[0], v[1], v[2], pad), 1);
    };
    EXPECT_LT(gradcheck::max_error(b, {rnd({2, 2, 5, 4}, 1), rnd({3, 2, 3, 3}, 2), rnd({1, 3, 1, 1}, 3)}), kOpTol);
  }
}

TEST(AutodiffGrad, BatchNormTrainAndEval) {
  Tensor<double> rm(Shape{1, 3, 1, 1}, 0.2), rv(Shape{1, 3, 1, 1}, 1.5);
  for (ad::BnMode mode : {ad::BnMode::kTrain, ad::BnMode::kEval}) {
    Builder b = [&, mode](Tape& t, const std::vector<Var>& v) {
      ad::BatchNormStats<double> st{&rm, &rv, nullptr, nullptr};
      return gradcheck::project(t, ad::batch_norm(v[0], v[1], v[2], st, mode, 0.1, 1e-5), 4);
    };
    EXPECT_LT(gradcheck::max_error(b, {rnd({2, 3, 3, 4}, 5), rnd({1, 3, 1, 1}, 6, 0.5, 1.5), rnd({1, 3, 1, 1}, 7)}),
              kOpTol);
  }
}

TEST(AutodiffGrad, Activations) {
  Builder pre = [](Tape& t, const std::vector<Var>& v) { return gradcheck::project(t, ad::prelu(v[0], v[1]), 8); };
  EXPECT_LT(gradcheck::max_error(pre, {away_from_zero({1, 2, 4, 4}, 9), Tensor<double>::scalar(0.25)}), kOpTol);
  Builder th = [](Tape& t, const std::vector<Var>& v) { return gradcheck::project(t, ad::tanh(v[0]), 10); };
  EXPECT_LT(gradcheck::max_error(th, {rnd({1, 2, 3, 3}, 11, -2, 2)}), kOpTol);
  Builder sg = [](Tape& t, const std::vector<Var>& v) { return gradcheck::project(t, ad::sigmoid(v[0]), 12); };
  EXPECT_LT(gradcheck::max_error(sg, {rnd({1, 2, 3, 3}, 13, -3, 3)}), kOpTol);
}

TEST(AutodiffGrad, Elementwise) {
  const Shape s{2, 2, 3, 3};
  auto check = [&](auto op, std::uint64_t seed, Tensor<double> a, Tensor<double> b) {
    Builder f = [op, seed](Tape& t, const std::vector<Var>& v) { return gradcheck::project(t, op(v[0], v[1]), seed); };
    return gradcheck::max_error(f, {std::move(a), std::move(b)});
  };
  EXPECT_LT(check([](auto& a, auto& b) { return ad::add(a, b); }, 20, rnd(s, 21), rnd(s, 22)), kOpTol);
  EXPECT_LT(check([](auto& a, auto& b) { return ad::sub(a, b); }, 23, rnd(s, 24), rnd(s, 25)), kOpTol);
  EXPECT_LT(check([](auto& a, auto& b) { return ad::mul(a, b); }, 26, rnd(s, 27), rnd(s, 28)), kOpTol);
  EXPECT_LT(check([](auto& a, auto& b) { return ad::div(a, b); }, 29, rnd(s, 30), rnd(s, 31, 0.5, 2.0)), kOpTol);
  EXPECT_LT(check([](auto& a, auto& b) { return ad::concat_channels(a, b); }, 32, rnd(s, 33), rnd({2, 1, 3, 3}, 34)),
            kOpTol);
}

TEST(AutodiffGrad, UnaryAndReductions) {
  const Shape s{1, 2, 4, 5};
  auto check1 = [&](auto op, Tensor<double> a) {
    Builder f = [op](Tape& t, const std::vector<Var>& v) { return op(t, v[0]); };
    return gradcheck::max_error(f, {std::move(a)});
  };
  EXPECT_LT(check1([](Tape& t, const Var& a) { return gradcheck::project(t, ad::scale(a, -2.5), 40); }, rnd(s, 41)), kOpTol);
  EXPECT_LT(check1([](Tape& t, const Var& a) { return gradcheck::project(t, ad::add_scalar(a, 0.7), 42); }, rnd(s, 43)), kOpTol);
  EXPECT_LT(check1([](Tape& t, const Var& a) { return gradcheck::project(t, ad::abs(a), 44); }, away_from_zero(s, 45)), kOpTol);
  EXPECT_LT(check1([](Tape&, const Var& a) { return ad::sum(ad::mul(a, a)); }, rnd(s, 46)), kOpTol);
  EXPECT_LT(check1([](Tape&, const Var& a) { return ad::mean(ad::mul(a, a)); }, rnd(s, 47)), kOpTol);
  EXPECT_LT(check1([](Tape& t, const Var& a) { return gradcheck::project(t, ad::diff_x(a), 48); }, rnd(s, 49)), kOpTol);
  EXPECT_LT(check1([](Tape& t, const Var& a) { return gradcheck::project(t, ad::diff_y(a), 50); }, rnd(s, 51)), kOpTol);
  const auto taps = kernels::gaussian_taps(3, 0.8);
  EXPECT_LT(check1([&](Tape& t, const Var& a) { return gradcheck::project(t, ad::filter_valid(a, taps, taps), 52); },
                   rnd(s, 53)),
            kOpTol);
}

TEST(Autodiff, ShapesOfDifferences) {
  Tape t;
  Var a = t.leaf(rnd({2, 3, 4, 5}, 1));
  EXPECT_EQ(ad::diff_x(a).shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(ad::diff_y(a).shape(), (Shape{2, 3, 3, 5}));
}

TEST(Autodiff, LeafGradientsAccumulateUntilZeroed) {
  Tape t;
  Var x = t.leaf(Tensor<double>(Shape{1, 1, 1, 2}, 3.0));
  Var y = ad::sum(ad::mul(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  t.backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  t.zero_grad();
  EXPECT_TRUE(x.grad().empty());
}

TEST(Autodiff, NonRecordingTapeKeepsNothing) {
  Tape t(false);
  Var x = t.leaf(rnd({1, 1, 3, 3}, 2));
  Var y = ad::sum(ad::tanh(x));
  EXPECT_EQ(t.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
  Tape t;
  Var x = t.leaf(rnd({1, 1, 2, 2}, 3));
  EXPECT_THROW(t.backward(ad::tanh(x)), ShapeError);
}

TEST(Autodiff, MismatchedShapesRejected) {
  Tape t;
  Var a = t.leaf(rnd({1, 1, 2, 2}, 4)), b = t.leaf(rnd({1, 1, 2, 3}, 5));
  EXPECT_THROW(ad::add(a, b), ShapeError);
  EXPECT_THROW(ad::mul(a, b), ShapeError);
  EXPECT_THROW(ad::concat_channels(a, b), ShapeError);
}

TEST(Autodiff, ActivationsRejectNonFinite) {
  Tape t;
  Tensor<double> bad(Shape{1, 1, 1, 2}, 0.0);
  bad[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(ad::tanh(t.leaf(bad)), std::domain_error);
  EXPECT_THROW(ad::sigmoid(t.leaf(bad)), std::domain_error);
}

TEST(Autodiff, BatchNormUpdatesMovingAverages) {
  Tape t;
  Tensor<double> x(Shape{2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  Tensor<double> rm(Shape{1, 1, 1, 1}, 0.0), rv(Shape{1, 1, 1, 1}, 1.0);
  ad::BatchNormStats<double> st{&rm, &rv, &rm, &rv};
  Var y = ad::batch_norm(t.leaf(x), t.leaf(Tensor<double>::scalar(1.0)), t.leaf(Tensor<double>::scalar(0.0)), st,
                         ad::BnMode::kTrain, 0.1, 1e-5);
  // batch mean 2.5, unbiased variance 5/3
  EXPECT_NEAR(rm[0], 0.25, 1e-15);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-15);
  double m = 0;
  for (double v : y.value().data()) m += v;
  EXPECT_NEAR(m, 0.0, 1e-12);
}

TEST(Adam, ConvergesOnQuadratic) {
  std::vector<double> x{1.0};
  const std::size_t sizes[] = {1};
  auto st = make_adam_state<double>(sizes);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> g{2 * x[0]};
    std::span<double> ps[] = {x};
    std::span<const double> gs[] = {g};
    adam_step<double>(ps, gs, st, 0.1);
  }
  EXPECT_LT(std::abs(x[0]), 0.05);
  EXPECT_EQ(st.t, 100u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<double> x{0.0, 0.0};
  const std::size_t sizes[] = {2};
  auto st = make_adam_state<double>(sizes);
  std::vector<double> g{3.0, -0.01};
  std::span<double> ps[] = {x};
  std::span<const double> gs[] = {g};
  adam_step<double>(ps, gs, st, 1e-3);
  EXPECT_NEAR(x[0], -1e-3, 1e-9);
  EXPECT_NEAR(x[1], 1e-3, 1e-6);
}

TEST(Adam, RejectsBadArguments) {
  std::vector<double> x{0.0};
  const std::size_t sizes[] = {1};
  auto st = make_adam_state<double>(sizes);
  std::vector<double> g{1.0, 2.0};
  std::span<double> ps[] = {x};
  std::span<const double> gs[] = {g};
  EXPECT_THROW(adam_step<double>(ps, gs, st, 1e-3), std::invalid_argument);
  std::vector<double> g1{1.0};
  std::span<const double> gs1[] = {g1};
  EXPECT_THROW(adam_step<double>(ps, gs1, st, 0.0), std::invalid_argument);
}
