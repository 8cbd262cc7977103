#include "didfuse/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace didfuse {

std::array<LayerSpec, 7> layer_plan(const Architecture& arch) {
  if (arch.width == 0) throw std::invalid_argument("network width must be >= 1");
  if (!arch.has_base && !arch.has_detail) {
    throw std::invalid_argument("architecture needs at least one of the base and detail branches");
  }
  const std::size_t w = arch.width;
  const std::size_t dec_in = (arch.has_base && arch.has_detail) ? 2 * w : w;
  const std::size_t skip_in = arch.skip_mode == SkipMode::kConcat ? 2 * w : w;
  using enum Activation;
  return {{
      {"conv1", 1, w, Padding::kReflect, kPrelu, true},
      {"conv2", w, w, Padding::kZero, kPrelu, true},
      {"conv3", w, w, Padding::kZero, kTanh, arch.has_base},
      {"conv4", w, w, Padding::kZero, kTanh, arch.has_detail},
      {"conv5", dec_in, w, Padding::kZero, kPrelu, true},
      {"conv6", skip_in, w, Padding::kZero, kPrelu, true},
      {"conv7", skip_in, 1, Padding::kReflect, kSigmoid, true},
  }};
}

std::string to_string(SkipMode m) {
  switch (m) {
    case SkipMode::kAdd: return "add";
    case SkipMode::kConcat: return "concat";
    case SkipMode::kNone: return "none";
  }
  return "add";
}

SkipMode parse_skip_mode(const std::string& s) {
  if (s == "add") return SkipMode::kAdd;
  if (s == "concat") return SkipMode::kConcat;
  if (s == "none") return SkipMode::kNone;
  throw std::invalid_argument("unknown skip mode '" + s + "' (expected add|concat|none)");
}

template <typename T>
std::vector<Tensor<T>*> NetworkParams<T>::trainable() {
  std::vector<Tensor<T>*> out;
  for (auto& l : layers) {
    if (!l.spec.present) continue;
    out.insert(out.end(), {&l.kernel, &l.bias, &l.gamma, &l.beta});
    if (l.spec.activation == Activation::kPrelu) out.push_back(&l.slope);
  }
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> NetworkParams<T>::trainable() const {
  auto v = const_cast<NetworkParams*>(this)->trainable();
  return {v.begin(), v.end()};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> NetworkParams<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& l : layers) {
    if (!l.spec.present) continue;
    const std::string& n = l.spec.name;
    out.emplace_back(n + ".kernel", &l.kernel);
    out.emplace_back(n + ".bias", &l.bias);
    out.emplace_back(n + ".bn_gamma", &l.gamma);
    out.emplace_back(n + ".bn_beta", &l.beta);
    out.emplace_back(n + ".bn_running_mean", &l.running_mean);
    out.emplace_back(n + ".bn_running_var", &l.running_var);
    if (l.spec.activation == Activation::kPrelu) out.emplace_back(n + ".prelu_slope", &l.slope);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> NetworkParams<T>::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [n, t] : const_cast<NetworkParams*>(this)->named_tensors()) out.emplace_back(n, t);
  return out;
}

template <typename T>
NetworkParams<T> init_params(const Architecture& arch, std::uint64_t seed) {
  NetworkParams<T> p;
  p.arch = arch;
  const auto plan = layer_plan(arch);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    ConvLayer<T>& l = p.layers[i];
    l.spec = plan[i];
    if (!l.spec.present) continue;
    const std::size_t in = l.spec.in_c, out = l.spec.out_c;
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    std::uniform_real_distribution<double> dist(-bound, bound);
    l.kernel = Tensor<T>(Shape{out, in, 3, 3});
    for (T& v : l.kernel.data()) v = static_cast<T>(dist(rng));
    l.bias = Tensor<T>(Shape{1, out, 1, 1}, T{0});
    l.gamma = Tensor<T>(Shape{1, out, 1, 1}, T{1});
    l.beta = Tensor<T>(Shape{1, out, 1, 1}, T{0});
    l.running_mean = Tensor<T>(Shape{1, out, 1, 1}, T{0});
    l.running_var = Tensor<T>(Shape{1, out, 1, 1}, T{1});
    if (l.spec.activation == Activation::kPrelu) l.slope = Tensor<T>::scalar(T(0.25));
  }
  return p;
}

template <typename T>
BoundNetwork<T>::BoundNetwork(ad::Tape<T>& tape, NetworkParams<T>& params, bool requires_grad) : tape_(&tape) {
  bind(params, &params, requires_grad);
}

template <typename T>
BoundNetwork<T>::BoundNetwork(ad::Tape<T>& tape, const NetworkParams<T>& params) : tape_(&tape) {
  bind(params, nullptr, false);
}

template <typename T>
void BoundNetwork<T>::bind(const NetworkParams<T>& params, NetworkParams<T>* mutable_params, bool requires_grad) {
  arch_ = params.arch;
  momentum_ = params.bn_momentum;
  eps_ = params.bn_eps;
  const auto plan = layer_plan(arch_);
  for (std::size_t i = 0; i < 7; ++i) {
    const ConvLayer<T>& src = params.layers[i];
    Layer& dst = layers_[i];
    dst.spec = plan[i];
    if (!plan[i].present) continue;
    if (src.kernel.shape() != Shape{plan[i].out_c, plan[i].in_c, 3, 3}) {
      throw ShapeError(plan[i].name + " kernel " + to_string(src.kernel.shape()) +
                       " does not follow the channel plan for width " + std::to_string(arch_.width));
    }
    dst.kernel = tape_->leaf(src.kernel, requires_grad);
    dst.bias = tape_->leaf(src.bias, requires_grad);
    dst.gamma = tape_->leaf(src.gamma, requires_grad);
    dst.beta = tape_->leaf(src.beta, requires_grad);
    trainable_.insert(trainable_.end(), {dst.kernel, dst.bias, dst.gamma, dst.beta});
    if (plan[i].activation == Activation::kPrelu) {
      dst.slope = tape_->leaf(src.slope, requires_grad);
      trainable_.push_back(dst.slope);
    }
    dst.stats.mean = &src.running_mean;
    dst.stats.var = &src.running_var;
    if (mutable_params != nullptr) {
      dst.stats.update_mean = &mutable_params->layers[i].running_mean;
      dst.stats.update_var = &mutable_params->layers[i].running_var;
    }
  }
}

template <typename T>
ad::Var<T> BoundNetwork<T>::apply(std::size_t i, const ad::Var<T>& x, ad::BnMode mode) const {
  const Layer& l = layers_[i];
  if (x.shape().c != l.spec.in_c) {
    throw ShapeError(l.spec.name + " expects " + std::to_string(l.spec.in_c) + " input channels, got " +
                     to_string(x.shape()));
  }
  ad::Var<T> y = ad::conv3x3(x, l.kernel, l.bias, l.spec.padding);
  y = ad::batch_norm(y, l.gamma, l.beta, l.stats, mode, momentum_, eps_);
  switch (l.spec.activation) {
    case Activation::kPrelu: return ad::prelu(y, l.slope);
    case Activation::kTanh: return ad::tanh(y);
    case Activation::kSigmoid: return ad::sigmoid(y);
  }
  return y;
}

template <typename T>
FeaturePair<T> BoundNetwork<T>::encode(const ad::Var<T>& image, ad::BnMode mode) const {
  const Shape& s = image.shape();
  if (s.c != 1) throw ShapeError("encoder expects single-channel images, got " + to_string(s));
  if (s.h < 2 || s.w < 2) throw ShapeError("encoder needs images of at least 2x2, got " + to_string(s));
  FeaturePair<T> fp;
  fp.skip1 = apply(0, image, mode);
  fp.skip2 = apply(1, fp.skip1, mode);
  if (arch_.has_base) fp.base = apply(2, fp.skip2, mode);
  if (arch_.has_detail) fp.detail = apply(3, fp.skip2, mode);
  return fp;
}

template <typename T>
ad::Var<T> BoundNetwork<T>::decode(const FeaturePair<T>& fp, ad::BnMode mode) const {
  ad::Var<T> features;
  if (arch_.has_base && arch_.has_detail) {
    if (!fp.base.defined() || !fp.detail.defined()) throw ShapeError("decoder needs both base and detail maps");
    if (fp.base.shape() != fp.detail.shape()) {
      throw ShapeError("base " + to_string(fp.base.shape()) + " and detail " + to_string(fp.detail.shape()) +
                       " shapes differ");
    }
    features = ad::concat_channels(fp.base, fp.detail);
  } else {
    features = arch_.has_base ? fp.base : fp.detail;
    if (!features.defined()) throw ShapeError("decoder is missing its feature map");
  }
  auto merge = [&](const ad::Var<T>& y, const ad::Var<T>& skip) {
    if (arch_.skip_mode == SkipMode::kNone) return y;
    if (!skip.defined() || skip.shape() != y.shape()) {
      throw ShapeError("skip activation " + (skip.defined() ? to_string(skip.shape()) : std::string("<none>")) +
                       " does not match decoder tensor " + to_string(y.shape()));
    }
    return arch_.skip_mode == SkipMode::kAdd ? ad::add(y, skip) : ad::concat_channels(y, skip);
  };
  ad::Var<T> y5 = apply(4, features, mode);
  ad::Var<T> y6 = apply(5, merge(y5, fp.skip2), mode);
  return apply(6, merge(y6, fp.skip1), mode);
}

template <typename T>
std::pair<ad::Var<T>, FeaturePair<T>> BoundNetwork<T>::reconstruct(const ad::Var<T>& image, ad::BnMode mode) const {
  FeaturePair<T> fp = encode(image, mode);
  ad::Var<T> out = decode(fp, mode);
  return {out, fp};
}

template <typename T>
std::vector<std::vector<T>> BoundNetwork<T>::gradients() const {
  std::vector<std::vector<T>> out;
  out.reserve(trainable_.size());
  for (const auto& v : trainable_) {
    if (v.grad().empty()) {
      out.emplace_back(v.value().numel(), T{0});
    } else {
      out.emplace_back(v.grad().begin(), v.grad().end());
    }
  }
  return out;
}

template <typename T>
FeatureMaps<T> encode(const NetworkParams<T>& params, const Tensor<T>& image) {
  ad::Tape<T> tape(false);
  BoundNetwork<T> net(tape, params);
  FeaturePair<T> fp = net.encode(tape.constant(image), ad::BnMode::kEval);
  FeatureMaps<T> maps;
  if (fp.base.defined()) maps.base = fp.base.value();
  if (fp.detail.defined()) maps.detail = fp.detail.value();
  maps.skip1 = fp.skip1.value();
  maps.skip2 = fp.skip2.value();
  return maps;
}

template <typename T>
Tensor<T> decode(const NetworkParams<T>& params, const FeatureMaps<T>& maps) {
  ad::Tape<T> tape(false);
  BoundNetwork<T> net(tape, params);
  FeaturePair<T> fp;
  if (!maps.base.empty()) fp.base = tape.constant(maps.base);
  if (!maps.detail.empty()) fp.detail = tape.constant(maps.detail);
  fp.skip1 = tape.constant(maps.skip1);
  fp.skip2 = tape.constant(maps.skip2);
  return net.decode(fp, ad::BnMode::kEval).value();
}

template <typename T>
Tensor<T> reconstruct(const NetworkParams<T>& params, const Tensor<T>& image) {
  return decode(params, encode(params, image));
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template class BoundNetwork<float>;
template class BoundNetwork<double>;
template NetworkParams<float> init_params(const Architecture&, std::uint64_t);
template NetworkParams<double> init_params(const Architecture&, std::uint64_t);
template FeatureMaps<float> encode(const NetworkParams<float>&, const Tensor<float>&);
template FeatureMaps<double> encode(const NetworkParams<double>&, const Tensor<double>&);
template Tensor<float> decode(const NetworkParams<float>&, const FeatureMaps<float>&);
template Tensor<double> decode(const NetworkParams<double>&, const FeatureMaps<double>&);
template Tensor<float> reconstruct(const NetworkParams<float>&, const Tensor<float>&);
template Tensor<double> reconstruct(const NetworkParams<double>&, const Tensor<double>&);

}  // namespace didfuse
