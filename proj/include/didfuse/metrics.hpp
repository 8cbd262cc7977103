#pragma once

// Reference-free and source-referenced fusion quality scores. Inputs are
// [0,1] images; every metric works on the 0..255 scale.

#include <string>

#include "didfuse/image.hpp"

namespace didfuse::metrics {

// Pixel-domain multi-scale VIF. Window at scale s (1-based) has side
// 2^(scales-s+1)+1 and Gaussian sigma side/5.
struct VifConfig {
  int scales = 4;
  double sigma_nsq = 2.0;
};

struct MetricReport {
  std::string fused_id, ir_id, vis_id;
  double en = 0.0;
  double sd = 0.0;
  double sf = 0.0;
  double vif = 0.0;
  double ag = 0.0;
  double scd = 0.0;

  // Throws std::logic_error if a score leaves its admissible range.
  void check_ranges() const;
};

// Round-half-up quantization of a [0,1] value to 0..255.
int quantize(double v);

double entropy(const Image& img);
double std_dev(const Image& img);
double spatial_frequency(const Image& img);
double avg_gradient(const Image& img);
double vif_single(const Image& reference, const Image& distorted, const VifConfig& cfg = {});
double vif(const Image& fused, const Image& ir, const Image& vis, const VifConfig& cfg = {});
// Pearson correlation, 0 when either operand is constant.
double correlation(const Image& a, const Image& b);
double scd(const Image& fused, const Image& ir, const Image& vis);

MetricReport evaluate_all(const Image& fused, const Image& ir, const Image& vis, const VifConfig& cfg = {});

std::string csv_header();
std::string csv_row(const std::string& id, const MetricReport& r);

}  // namespace didfuse::metrics
