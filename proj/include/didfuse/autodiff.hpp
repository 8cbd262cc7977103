#pragma once

// Tape-based reverse-mode differentiation over rank-4 tensors, limited to the
// operations the fusion network and its training objective use.
//
// Every op takes Vars created on the same Tape. When the tape is recording and
// at least one operand requires a gradient, the op appends a node holding its
// backward closure; otherwise the result is a detached value and nothing is
// retained, which is how inference avoids keeping activations alive.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "didfuse/kernels.hpp"
#include "didfuse/tensor.hpp"

namespace didfuse::ad {

enum class BnMode { kTrain, kEval };

template <typename T>
struct Node {
  std::string op;
  Tensor<T> value;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  bool leaf = false;
  std::function<void(Node&)> backward;

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(value.numel(), T{0});
    return grad;
  }
};

template <typename T>
class Tape;

template <typename T>
class Var {
 public:
  Var() = default;
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::span<const T> grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tape<T>* tape() const { return tape_; }
  Node<T>& node() const { return *node_; }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Node<T>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  // A parameter or input. Leaves keep their gradient across backward() calls
  // until zero_grad().
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Var<T> record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> operands, BackwardFn fn);

  // Seeds d(root)/d(root) = 1 and replays the tape in reverse. Gradients of
  // intermediate nodes are reset first; leaf gradients accumulate.
  void backward(const Var<T>& root);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const std::vector<std::shared_ptr<Node<T>>>& nodes() const { return nodes_; }

 private:
  bool recording_;
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

template <typename T>
struct BatchNormStats {
  const Tensor<T>* mean = nullptr;
  const Tensor<T>* var = nullptr;
  Tensor<T>* update_mean = nullptr;  // train mode writes the moving averages here when set
  Tensor<T>* update_var = nullptr;
};

template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, Padding pad);

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T> stats, BnMode mode,
                  T momentum, T eps);

// Single shared slope: y = x for x > 0, slope * x otherwise.
template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope);
template <typename T>
Var<T> tanh(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T s);
template <typename T>
Var<T> add_scalar(const Var<T>& a, T s);
template <typename T>
Var<T> abs(const Var<T>& a);

template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a);

// Forward differences a[.., x+1] - a[.., x] and a[.., y+1, ..] - a[.., y, ..].
template <typename T>
Var<T> diff_x(const Var<T>& a);
template <typename T>
Var<T> diff_y(const Var<T>& a);

template <typename T>
Var<T> filter_valid(const Var<T>& a, std::vector<double> rows, std::vector<double> cols);

}  // namespace didfuse::ad
