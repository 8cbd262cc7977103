#pragma once

// Test-time merging of infrared/visible feature maps: three spatial attention
// strategies (l1 activity, histogram saliency + guided filter, fixed weights)
// and channel attention from pooled channel activity. Weight tensors always
// hold the infrared weight; the visible weight is its complement.

#include <string>
#include <vector>

#include "didfuse/image.hpp"
#include "didfuse/network.hpp"
#include "didfuse/tensor.hpp"

namespace didfuse::fusion {

enum class SamStrategy { kL1, kSaliency, kWeighted };

std::string to_string(SamStrategy s);
SamStrategy parse_sam(const std::string& s);

struct FusionConfig {
  SamStrategy sam = SamStrategy::kSaliency;
  bool use_cam = true;
  double gamma1 = 0.5;  // base, infrared
  double gamma2 = 0.5;  // base, visible
  double gamma3 = 0.5;  // detail, infrared
  double gamma4 = 0.5;  // detail, visible
  int gf_radius = 5;
  double gf_eps = 0.01;
  int sal_bins = 256;

  // Throws std::invalid_argument when a constraint is violated.
  void validate() const;
  std::string describe() const;
};

// Histogram-contrast saliency: S(p) = sum_k H(k) |q(F(p)) - q_k| over `bins`
// equal bins of [lo, hi]; H holds bin frequencies, q the bin centers.
Image saliency_map(const Image& channel, int bins, double lo = -1.0, double hi = 1.0);

// Local linear guided filter with edge-replicated (2r+1)^2 box windows.
Image guided_filter(const Image& p, const Image& guide, int radius, double eps);

// 3x3 mean filter, edge-replicated.
Image box_blur(const Image& src);

// Infrared weight maps. l1: (n,1,h,w) broadcast over channels;
// saliency: (n,C,h,w); cam: one weight per (n, channel).
Tensor<double> l1_weights(const Tensor<double>& f_ir, const Tensor<double>& f_vis);
Tensor<double> saliency_weights(const Tensor<double>& f_ir, const Tensor<double>& f_vis, const FusionConfig& cfg);
std::vector<double> cam_weights(const Tensor<double>& f_ir, const Tensor<double>& f_vis);

Tensor<double> sam_l1(const Tensor<double>& f_ir, const Tensor<double>& f_vis);
Tensor<double> sam_saliency(const Tensor<double>& f_ir, const Tensor<double>& f_vis, const FusionConfig& cfg);
Tensor<double> sam_weighted(const Tensor<double>& f_ir, const Tensor<double>& f_vis, double gamma_ir,
                            double gamma_vis);
Tensor<double> cam(const Tensor<double>& f_ir, const Tensor<double>& f_vis);

// Merges one feature map pair with the configured strategy (and CAM).
Tensor<double> fuse_map(const Tensor<double>& f_ir, const Tensor<double>& f_vis, const FusionConfig& cfg,
                        bool is_base);

struct FusedFeatures {
  Tensor<double> base;    // empty when the network has no base branch
  Tensor<double> detail;  // empty when the network has no detail branch
};

FusedFeatures fuse_features(const FeatureMaps<double>& ir, const FeatureMaps<double>& vis, const FusionConfig& cfg);

}  // namespace didfuse::fusion
