#pragma once

// Dual-stream auto-encoder: a four-layer encoder splitting an image into base
// (conv3) and detail (conv4) feature maps, and a three-layer decoder that
// reconstructs the image from their concatenation with skip connections from
// conv1/conv2 into the inputs of conv7/conv6.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "didfuse/autodiff.hpp"
#include "didfuse/tensor.hpp"

namespace didfuse {

enum class Activation { kPrelu, kTanh, kSigmoid };

// kAdd keeps the published channel table; kConcat widens conv6/conv7 inputs
// to 2W; kNone drops the skips entirely.
enum class SkipMode { kAdd, kConcat, kNone };

struct Architecture {
  std::size_t width = 64;
  bool has_base = true;    // conv3
  bool has_detail = true;  // conv4
  SkipMode skip_mode = SkipMode::kAdd;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct LayerSpec {
  std::string name;
  std::size_t in_c = 0;
  std::size_t out_c = 0;
  Padding padding = Padding::kZero;
  Activation activation = Activation::kPrelu;
  bool present = true;
};

std::array<LayerSpec, 7> layer_plan(const Architecture& arch);

std::string to_string(SkipMode m);
SkipMode parse_skip_mode(const std::string& s);

template <typename T>
struct ConvLayer {
  LayerSpec spec;
  Tensor<T> kernel;        // (out, in, 3, 3)
  Tensor<T> bias;          // (1, out, 1, 1)
  Tensor<T> gamma;         // batch-norm scale
  Tensor<T> beta;          // batch-norm shift
  Tensor<T> running_mean;  // not trained; moving averages
  Tensor<T> running_var;
  Tensor<T> slope;  // (1,1,1,1) for PReLU layers, empty otherwise
};

template <typename T>
struct NetworkParams {
  Architecture arch;
  T bn_momentum = T(0.1);
  T bn_eps = T(1e-5);
  std::array<ConvLayer<T>, 7> layers;

  // Learnable tensors of present layers in a fixed order:
  // kernel, bias, gamma, beta, [slope] per layer.
  std::vector<Tensor<T>*> trainable();
  std::vector<const Tensor<T>*> trainable() const;

  // Every stored tensor (running statistics included) with its name, in
  // checkpoint order.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const;
};

// Kernels ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases 0; BN gamma 1, beta 0,
// running mean 0, running var 1; PReLU slopes 0.25.
template <typename T>
NetworkParams<T> init_params(const Architecture& arch, std::uint64_t seed);

template <typename T>
NetworkParams<T> init_params(std::size_t width, std::uint64_t seed) {
  return init_params<T>(Architecture{.width = width}, seed);
}

template <typename To, typename From>
NetworkParams<To> params_cast(const NetworkParams<From>& src) {
  NetworkParams<To> out;
  out.arch = src.arch;
  out.bn_momentum = static_cast<To>(src.bn_momentum);
  out.bn_eps = static_cast<To>(src.bn_eps);
  for (std::size_t i = 0; i < src.layers.size(); ++i) {
    const auto& a = src.layers[i];
    auto& b = out.layers[i];
    b.spec = a.spec;
    b.kernel = tensor_cast<To>(a.kernel);
    b.bias = tensor_cast<To>(a.bias);
    b.gamma = tensor_cast<To>(a.gamma);
    b.beta = tensor_cast<To>(a.beta);
    b.running_mean = tensor_cast<To>(a.running_mean);
    b.running_var = tensor_cast<To>(a.running_var);
    b.slope = tensor_cast<To>(a.slope);
  }
  return out;
}

// Encoder output for one batch. base or detail is undefined when the
// architecture drops that branch.
template <typename T>
struct FeaturePair {
  ad::Var<T> base;
  ad::Var<T> detail;
  ad::Var<T> skip1;  // conv1 activation
  ad::Var<T> skip2;  // conv2 activation
};

// Parameters placed on a tape as leaves. A mutable NetworkParams lets train
// mode update the batch-norm moving averages.
template <typename T>
class BoundNetwork {
 public:
  BoundNetwork(ad::Tape<T>& tape, NetworkParams<T>& params, bool requires_grad = true);
  BoundNetwork(ad::Tape<T>& tape, const NetworkParams<T>& params);

  FeaturePair<T> encode(const ad::Var<T>& image, ad::BnMode mode) const;
  ad::Var<T> decode(const FeaturePair<T>& fp, ad::BnMode mode) const;
  std::pair<ad::Var<T>, FeaturePair<T>> reconstruct(const ad::Var<T>& image, ad::BnMode mode) const;

  // Gradient of each trainable tensor, aligned with NetworkParams::trainable().
  std::vector<std::vector<T>> gradients() const;

  ad::Tape<T>& tape() const { return *tape_; }
  const Architecture& arch() const { return arch_; }

 private:
  struct Layer {
    LayerSpec spec;
    ad::Var<T> kernel, bias, gamma, beta, slope;
    ad::BatchNormStats<T> stats;
  };

  void bind(const NetworkParams<T>& params, NetworkParams<T>* mutable_params, bool requires_grad);
  ad::Var<T> apply(std::size_t layer, const ad::Var<T>& x, ad::BnMode mode) const;

  ad::Tape<T>* tape_;
  Architecture arch_;
  T momentum_;
  T eps_;
  std::array<Layer, 7> layers_;
  std::vector<ad::Var<T>> trainable_;
};

// Eval-mode helpers on plain tensors for inference.
template <typename T>
struct FeatureMaps {
  Tensor<T> base;
  Tensor<T> detail;
  Tensor<T> skip1;
  Tensor<T> skip2;
};

template <typename T>
FeatureMaps<T> encode(const NetworkParams<T>& params, const Tensor<T>& image);
template <typename T>
Tensor<T> decode(const NetworkParams<T>& params, const FeatureMaps<T>& maps);
template <typename T>
Tensor<T> reconstruct(const NetworkParams<T>& params, const Tensor<T>& image);

}  // namespace didfuse
