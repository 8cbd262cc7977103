#include "didfuse/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace didfuse::ad {
namespace {

template <typename T>
Tape<T>& tape_of(std::initializer_list<const Var<T>*> vars) {
  Tape<T>* tape = nullptr;
  for (const Var<T>* v : vars) {
    if (!v->defined()) throw std::invalid_argument("operation applied to an undefined variable");
    if (tape == nullptr) {
      tape = v->tape();
    } else if (v->tape() != tape) {
      throw std::invalid_argument("operands were recorded on different tapes");
    }
  }
  return *tape;
}

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

template <typename T>
void require_finite(const char* op, const Tensor<T>& t) {
  if (!all_finite(t)) throw std::domain_error(std::string(op) + ": non-finite input");
}

// Adds f(i) into operand v's gradient when v takes part in differentiation.
template <typename T, typename F>
void accumulate(const Var<T>& v, F&& f) {
  if (!v.requires_grad()) return;
  std::span<T> g = v.node().ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += f(i);
}

template <typename T, typename F>
Var<T> unary_map(const char* op, const Var<T>& a, F&& fwd) {
  Tape<T>& tape = tape_of<T>({&a});
  Tensor<T> out(a.shape());
  auto in = a.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
  return tape.record(op, std::move(out), {a}, nullptr);
}

}  // namespace

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->op = "leaf";
  node->value = std::move(value);
  node->leaf = true;
  node->requires_grad = requires_grad && recording_;
  if (node->requires_grad) nodes_.push_back(node);
  return Var<T>(std::move(node), this);
}

template <typename T>
Var<T> Tape<T>::record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> operands, BackwardFn fn) {
  auto node = std::make_shared<Node<T>>();
  node->op = std::move(op);
  node->value = std::move(value);
  bool needs = false;
  for (const Var<T>& v : operands) needs = needs || v.requires_grad();
  node->requires_grad = recording_ && needs;
  if (node->requires_grad) {
    node->backward = std::move(fn);
    nodes_.push_back(node);
  }
  return Var<T>(std::move(node), this);
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
  if (!root.defined() || root.value().numel() != 1) {
    throw ShapeError("backward root must be a scalar tensor");
  }
  if (!root.requires_grad() || root.tape() != this) {
    throw std::invalid_argument("backward root was not produced through this tape");
  }
  for (auto& n : nodes_) {
    if (!n->leaf) n->grad.clear();
  }
  root.node().ensure_grad()[0] += T{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

template <typename T>
void Tape<T>::zero_grad() {
  for (auto& n : nodes_) n->grad.clear();
}

template <typename T>
Var<T> conv3x3(const Var<T>& x, const Var<T>& kernel, const Var<T>& bias, Padding pad) {
  Tape<T>& tape = tape_of<T>({&x, &kernel, &bias});
  Tensor<T> out;
  kernels::conv3x3_forward(x.value(), kernel.value(), bias.value().data(), pad, out);
  return tape.record("conv3x3", std::move(out), {x, kernel, bias}, [x, kernel, bias, pad](Node<T>& self) {
    std::vector<T> gx(x.requires_grad() ? x.value().numel() : 0);
    std::vector<T> gk(kernel.requires_grad() ? kernel.value().numel() : 0);
    std::vector<T> gb(bias.requires_grad() ? bias.value().numel() : 0);
    kernels::conv3x3_backward<T>(x.value(), kernel.value(), pad, self.grad, gx, gk, gb);
    accumulate(x, [&](std::size_t i) { return gx[i]; });
    accumulate(kernel, [&](std::size_t i) { return gk[i]; });
    accumulate(bias, [&](std::size_t i) { return gb[i]; });
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T> stats, BnMode mode,
                  T momentum, T eps) {
  Tape<T>& tape = tape_of<T>({&x, &gamma, &beta});
  const Shape s = x.shape();
  if (gamma.value().numel() != s.c || beta.value().numel() != s.c) {
    throw ShapeError("batch_norm: gamma/beta length must equal channel count " + std::to_string(s.c));
  }
  if (!(eps > T{0})) throw std::invalid_argument("batch_norm: eps must be positive");
  const std::size_t count = s.n * s.h * s.w;
  if (count == 0) throw ShapeError("batch_norm: zero-size batch " + to_string(s));
  if (mode == BnMode::kEval && (stats.mean == nullptr || stats.var == nullptr)) {
    throw std::invalid_argument("batch_norm: eval mode needs running statistics");
  }
  const std::size_t plane = s.plane();
  const auto in = x.value().data();
  const auto g = gamma.value().data();
  const auto b = beta.value().data();

  Tensor<T> xhat(s);
  std::vector<T> inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    double m, var;
    if (mode == BnMode::kTrain) {
      double acc = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = in.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = in.data() + (n * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      var = sq / static_cast<double>(count);
      if (stats.update_mean != nullptr && stats.update_var != nullptr) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        T& rm = (*stats.update_mean)[c];
        T& rv = (*stats.update_var)[c];
        rm = static_cast<T>((1.0 - momentum) * rm + momentum * m);
        rv = static_cast<T>((1.0 - momentum) * rv + momentum * unbiased);
      }
    } else {
      m = (*stats.mean)[c];
      var = (*stats.var)[c];
    }
    inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T mt = static_cast<T>(m);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = in.data() + (n * s.c + c) * plane;
      T* q = xhat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mt) * inv_std[c];
    }
  }
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* q = xhat.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = g[c] * q[i] + b[c];
    }

  return tape.record(
      "batch_norm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, mode, xhat = std::move(xhat), inv_std = std::move(inv_std), count](Node<T>& self) {
        const Shape s = x.shape();
        const std::size_t plane = s.plane();
        const auto dy = std::span<const T>(self.grad);
        const auto gm = gamma.value().data();
        std::vector<double> sum_dy(s.c, 0.0), sum_dy_xhat(s.c, 0.0);
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t c = 0; c < s.c; ++c) {
            const T* d = dy.data() + (n * s.c + c) * plane;
            const T* q = xhat.plane(n, c);
            for (std::size_t i = 0; i < plane; ++i) {
              sum_dy[c] += d[i];
              sum_dy_xhat[c] += static_cast<double>(d[i]) * q[i];
            }
          }
        accumulate(gamma, [&](std::size_t c) { return static_cast<T>(sum_dy_xhat[c]); });
        accumulate(beta, [&](std::size_t c) { return static_cast<T>(sum_dy[c]); });
        if (!x.requires_grad()) return;
        std::span<T> gx = x.node().ensure_grad();
        const double inv_count = 1.0 / static_cast<double>(count);
        for (std::size_t n = 0; n < s.n; ++n)
          for (std::size_t c = 0; c < s.c; ++c) {
            const T* d = dy.data() + (n * s.c + c) * plane;
            const T* q = xhat.plane(n, c);
            T* out = gx.data() + (n * s.c + c) * plane;
            const T k = gm[c] * inv_std[c];
            if (mode == BnMode::kTrain) {
              const T mdy = static_cast<T>(sum_dy[c] * inv_count);
              const T mdyx = static_cast<T>(sum_dy_xhat[c] * inv_count);
              for (std::size_t i = 0; i < plane; ++i) out[i] += k * (d[i] - mdy - q[i] * mdyx);
            } else {
              for (std::size_t i = 0; i < plane; ++i) out[i] += k * d[i];
            }
          }
      });
}

template <typename T>
Var<T> prelu(const Var<T>& x, const Var<T>& slope) {
  Tape<T>& tape = tape_of<T>({&x, &slope});
  if (slope.value().numel() != 1) throw ShapeError("prelu: slope must be a single learnable scalar");
  require_finite("prelu", x.value());
  const T a = slope.value()[0];
  Tensor<T> out(x.shape());
  auto in = x.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T{0} ? in[i] : a * in[i];
  return tape.record("prelu", std::move(out), {x, slope}, [x, slope](Node<T>& self) {
    auto in = x.value().data();
    const T a = slope.value()[0];
    accumulate(x, [&](std::size_t i) { return in[i] > T{0} ? self.grad[i] : a * self.grad[i]; });
    if (slope.requires_grad()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < in.size(); ++i) {
        if (!(in[i] > T{0})) acc += static_cast<double>(in[i]) * self.grad[i];
      }
      slope.node().ensure_grad()[0] += static_cast<T>(acc);
    }
  });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  require_finite("tanh", x.value());
  Var<T> y = unary_map("tanh", x, [](T v) { return std::tanh(v); });
  if (y.requires_grad()) {
    y.node().backward = [x](Node<T>& self) {
      auto yv = self.value.data();
      accumulate(x, [&](std::size_t i) { return self.grad[i] * (T{1} - yv[i] * yv[i]); });
    };
  }
  return y;
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  require_finite("sigmoid", x.value());
  Var<T> y = unary_map("sigmoid", x, [](T v) { return T{1} / (T{1} + std::exp(-v)); });
  if (y.requires_grad()) {
    y.node().backward = [x](Node<T>& self) {
      auto yv = self.value.data();
      accumulate(x, [&](std::size_t i) { return self.grad[i] * yv[i] * (T{1} - yv[i]); });
    };
  }
  return y;
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = tape_of<T>({&a, &b});
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: batch/spatial mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  const std::size_t plane = sa.plane();
  Tensor<T> out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (std::size_t n = 0; n < sa.n; ++n) {
    const T* pa = a.value().data().data() + n * sa.c * plane;
    const T* pb = b.value().data().data() + n * sb.c * plane;
    T* o = out.plane(n, 0);
    std::copy(pa, pa + sa.c * plane, o);
    std::copy(pb, pb + sb.c * plane, o + sa.c * plane);
  }
  return tape.record("concat_channels", std::move(out), {a, b}, [a, b](Node<T>& self) {
    const Shape sa = a.shape(), sb = b.shape();
    const std::size_t plane = sa.plane(), stride = (sa.c + sb.c) * plane;
    accumulate(a, [&](std::size_t i) {
      const std::size_t n = i / (sa.c * plane), r = i % (sa.c * plane);
      return self.grad[n * stride + r];
    });
    accumulate(b, [&](std::size_t i) {
      const std::size_t n = i / (sb.c * plane), r = i % (sb.c * plane);
      return self.grad[n * stride + sa.c * plane + r];
    });
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = tape_of<T>({&a, &b});
  require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  auto pa = a.value().data(), pb = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] + pb[i];
  return tape.record("add", std::move(out), {a, b}, [a, b](Node<T>& self) {
    accumulate(a, [&](std::size_t i) { return self.grad[i]; });
    accumulate(b, [&](std::size_t i) { return self.grad[i]; });
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = tape_of<T>({&a, &b});
  require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  auto pa = a.value().data(), pb = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] - pb[i];
  return tape.record("sub", std::move(out), {a, b}, [a, b](Node<T>& self) {
    accumulate(a, [&](std::size_t i) { return self.grad[i]; });
    accumulate(b, [&](std::size_t i) { return -self.grad[i]; });
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = tape_of<T>({&a, &b});
  require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  auto pa = a.value().data(), pb = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * pb[i];
  return tape.record("mul", std::move(out), {a, b}, [a, b](Node<T>& self) {
    auto pa = a.value().data(), pb = b.value().data();
    accumulate(a, [&](std::size_t i) { return self.grad[i] * pb[i]; });
    accumulate(b, [&](std::size_t i) { return self.grad[i] * pa[i]; });
  });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = tape_of<T>({&a, &b});
  require_same_shape("div", a, b);
  Tensor<T> out(a.shape());
  auto pa = a.value().data(), pb = b.value().data();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] / pb[i];
  return tape.record("div", std::move(out), {a, b}, [a, b](Node<T>& self) {
    auto pb = b.value().data();
    auto q = self.value.data();
    accumulate(a, [&](std::size_t i) { return self.grad[i] / pb[i]; });
    accumulate(b, [&](std::size_t i) { return -self.grad[i] * q[i] / pb[i]; });
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Var<T> y = unary_map("scale", a, [s](T v) { return v * s; });
  if (y.requires_grad()) {
    y.node().backward = [a, s](Node<T>& self) { accumulate(a, [&](std::size_t i) { return self.grad[i] * s; }); };
  }
  return y;
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Var<T> y = unary_map("add_scalar", a, [s](T v) { return v + s; });
  if (y.requires_grad()) {
    y.node().backward = [a](Node<T>& self) { accumulate(a, [&](std::size_t i) { return self.grad[i]; }); };
  }
  return y;
}

template <typename T>
Var<T> abs(const Var<T>& a) {
  Var<T> y = unary_map("abs", a, [](T v) { return std::abs(v); });
  if (y.requires_grad()) {
    y.node().backward = [a](Node<T>& self) {
      auto in = a.value().data();
      accumulate(a, [&](std::size_t i) {
        return in[i] > T{0} ? self.grad[i] : (in[i] < T{0} ? -self.grad[i] : T{0});
      });
    };
  }
  return y;
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tape<T>& tape = tape_of<T>({&a});
  double acc = 0.0;
  for (T v : a.value().data()) acc += v;
  return tape.record("sum", Tensor<T>::scalar(static_cast<T>(acc)), {a}, [a](Node<T>& self) {
    const T g = self.grad[0];
    accumulate(a, [g](std::size_t) { return g; });
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  Tape<T>& tape = tape_of<T>({&a});
  const std::size_t count = a.value().numel();
  if (count == 0) throw ShapeError("mean of an empty tensor");
  double acc = 0.0;
  for (T v : a.value().data()) acc += v;
  return tape.record("mean", Tensor<T>::scalar(static_cast<T>(acc / count)), {a}, [a, count](Node<T>& self) {
    const T g = self.grad[0] / static_cast<T>(count);
    accumulate(a, [g](std::size_t) { return g; });
  });
}

template <typename T>
Var<T> diff_x(const Var<T>& a) {
  Tape<T>& tape = tape_of<T>({&a});
  const Shape s = a.shape();
  if (s.w < 2) throw ShapeError("diff_x needs width >= 2");
  Tensor<T> out(Shape{s.n, s.c, s.h, s.w - 1});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x + 1 < s.w; ++x) out(n, c, y, x) = a.value()(n, c, y, x + 1) - a.value()(n, c, y, x);
  return tape.record("diff_x", std::move(out), {a}, [a](Node<T>& self) {
    if (!a.requires_grad()) return;
    const Shape s = a.shape();
    std::span<T> g = a.node().ensure_grad();
    const std::size_t wo = s.w - 1;
    for (std::size_t p = 0; p < s.n * s.c * s.h; ++p) {
      const T* d = self.grad.data() + p * wo;
      T* r = g.data() + p * s.w;
      for (std::size_t x = 0; x < wo; ++x) {
        r[x + 1] += d[x];
        r[x] -= d[x];
      }
    }
  });
}

template <typename T>
Var<T> diff_y(const Var<T>& a) {
  Tape<T>& tape = tape_of<T>({&a});
  const Shape s = a.shape();
  if (s.h < 2) throw ShapeError("diff_y needs height >= 2");
  Tensor<T> out(Shape{s.n, s.c, s.h - 1, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y + 1 < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out(n, c, y, x) = a.value()(n, c, y + 1, x) - a.value()(n, c, y, x);
  return tape.record("diff_y", std::move(out), {a}, [a](Node<T>& self) {
    if (!a.requires_grad()) return;
    const Shape s = a.shape();
    std::span<T> g = a.node().ensure_grad();
    const std::size_t ho = s.h - 1;
    for (std::size_t p = 0; p < s.n * s.c; ++p) {
      const T* d = self.grad.data() + p * ho * s.w;
      T* r = g.data() + p * s.h * s.w;
      for (std::size_t i = 0; i < ho * s.w; ++i) {
        r[i + s.w] += d[i];
        r[i] -= d[i];
      }
    }
  });
}

template <typename T>
Var<T> filter_valid(const Var<T>& a, std::vector<double> rows, std::vector<double> cols) {
  Tape<T>& tape = tape_of<T>({&a});
  Tensor<T> out;
  kernels::separable_valid_forward(a.value(), rows, cols, out);
  return tape.record("filter_valid", std::move(out), {a}, [a, rows = std::move(rows), cols = std::move(cols)](Node<T>& self) {
    if (!a.requires_grad()) return;
    std::vector<T> gx(a.value().numel());
    kernels::separable_valid_backward<T>(a.shape(), rows, cols, self.grad, gx);
    accumulate(a, [&](std::size_t i) { return gx[i]; });
  });
}

#define DIDFUSE_INSTANTIATE(T)                                                                              \
  template class Tape<T>;                                                                                   \
  template Var<T> conv3x3(const Var<T>&, const Var<T>&, const Var<T>&, Padding);                            \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>, BnMode, T, T); \
  template Var<T> prelu(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> tanh(const Var<T>&);                                                                      \
  template Var<T> sigmoid(const Var<T>&);                                                                   \
  template Var<T> concat_channels(const Var<T>&, const Var<T>&);                                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> div(const Var<T>&, const Var<T>&);                                                        \
  template Var<T> scale(const Var<T>&, T);                                                                  \
  template Var<T> add_scalar(const Var<T>&, T);                                                             \
  template Var<T> abs(const Var<T>&);                                                                       \
  template Var<T> sum(const Var<T>&);                                                                       \
  template Var<T> mean(const Var<T>&);                                                                      \
  template Var<T> diff_x(const Var<T>&);                                                                    \
  template Var<T> diff_y(const Var<T>&);                                                                    \
  template Var<T> filter_valid(const Var<T>&, std::vector<double>, std::vector<double>);

DIDFUSE_INSTANTIATE(float)
DIDFUSE_INSTANTIATE(double)

#undef DIDFUSE_INSTANTIATE

}  // namespace didfuse::ad
