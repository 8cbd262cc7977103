#pragma once

// Training objective: feature decomposition term, SSIM-regularized
// reconstruction fidelity, visible-image gradient penalty, and the ablation
// variants built from them.

#include <string>

#include "didfuse/autodiff.hpp"
#include "didfuse/network.hpp"

namespace didfuse {

enum class LossVariant { kFull, kNoBase, kNoDetail, kNoDecomp, kClassicAe };

// How squared and absolute norms are reduced over their entries.
enum class Reduction { kSum, kMean };

struct LossConfig {
  double alpha1 = 0.05;
  double alpha2 = 2.0;
  double alpha3 = 2.0;
  double alpha4 = 10.0;
  double lambda = 5.0;
  LossVariant variant = LossVariant::kFull;
  Reduction reduction = Reduction::kMean;
};

std::string to_string(LossVariant v);
LossVariant parse_loss_variant(const std::string& s);
std::string to_string(Reduction r);
Reduction parse_reduction(const std::string& s);

struct LossBreakdown {
  double base_gap = 0.0;
  double detail_gap = 0.0;
  double recon_ir = 0.0;
  double recon_vis = 0.0;
  double grad_term = 0.0;
  double total = 0.0;
};

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

template <typename T>
struct DecompositionTerms {
  ad::Var<T> base_gap;    // tanh(||B_V - B_I||^2)
  ad::Var<T> detail_gap;  // tanh(||D_V - D_I||^2)
  ad::Var<T> value;       // base_gap - alpha1 * detail_gap
};

template <typename T>
DecompositionTerms<T> decomposition_loss(const ad::Var<T>& base_vis, const ad::Var<T>& base_ir,
                                         const ad::Var<T>& detail_vis, const ad::Var<T>& detail_ir, double alpha1,
                                         Reduction reduction = Reduction::kSum);

// Mean local SSIM over all valid Gaussian windows of an (n,1,h,w) batch.
template <typename T>
ad::Var<T> ssim(const ad::Var<T>& x, const ad::Var<T>& x_hat, const SsimConfig& cfg = {});

// ||X - X_hat||^2 + lambda * (1 - SSIM) / 2
template <typename T>
ad::Var<T> fidelity(const ad::Var<T>& x, const ad::Var<T>& x_hat, double lambda,
                    Reduction reduction = Reduction::kSum);

// l1 distance between forward-difference gradients (valid region only).
template <typename T>
ad::Var<T> gradient_penalty(const ad::Var<T>& v, const ad::Var<T>& v_hat, Reduction reduction = Reduction::kSum);

template <typename T>
struct LossInputs {
  ad::Var<T> ir, ir_hat;    // for kClassicAe: the single image X and its reconstruction
  ad::Var<T> vis, vis_hat;  // undefined for kClassicAe
  FeaturePair<T> fp_ir, fp_vis;
};

template <typename T>
struct LossTerms {
  ad::Var<T> base_gap, detail_gap, recon_ir, recon_vis, grad_term;  // undefined when the variant omits them
  ad::Var<T> total;

  LossBreakdown breakdown() const;
};

template <typename T>
LossTerms<T> total_loss(const LossInputs<T>& in, const LossConfig& cfg);

// Recombines unweighted parts with the variant's coefficients.
double combine(const LossBreakdown& parts, const LossConfig& cfg);

}  // namespace didfuse
