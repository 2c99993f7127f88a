#pragma once

// Reverse-mode gradient tape. Operations run eagerly; when a tape is supplied
// and an input requires gradients, a backward closure is appended. One
// backward pass per tape. Gradients accumulate additively, so values consumed
// by several operations receive the sum of their upstream contributions.

#include <array>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

#include "dtnet/kernels.hpp"
#include "dtnet/tensor.hpp"

namespace dtnet {

enum class Mode { Train, Infer };

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  bool grad_ready = false;

  Tensor<T>& ensure_grad() {
    if (!grad_ready) {
      grad = Tensor<T>::zeros(value.shape());
      grad_ready = true;
    }
    return grad;
  }
  void zero_grad() {
    if (grad_ready)
      std::fill(grad.vec().begin(), grad.vec().end(), T{});
  }
};

template <typename T>
using Var = std::shared_ptr<VarNode<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
  auto n = std::make_shared<VarNode<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  /// Seeds the root gradient with ones and replays the recorded operations in
  /// reverse. A tape supports exactly one backward pass.
  void backward(const Var<T>& root) {
    if (consumed_) throw std::logic_error("tape: backward already ran");
    consumed_ = true;
    auto& g = root->ensure_grad();
    std::fill(g.vec().begin(), g.vec().end(), T{1});
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
  }

  std::size_t size() const { return steps_.size(); }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

namespace detail {
template <typename T>
inline bool rec(Tape<T>* tape, std::initializer_list<const Var<T>*> inputs) {
  if (!tape) return false;
  for (const auto* v : inputs)
    if ((*v)->requires_grad) return true;
  return false;
}
template <typename T>
inline void acc(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}
}  // namespace detail

namespace ops {

template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  auto out = make_var(kernels::conv2d_forward(x->value, w->value, b->value));
  if (detail::rec(tape, {&x, &w, &b})) {
    out->requires_grad = true;
    tape->record([x, w, b, out]() {
      if (!out->grad_ready) return;
      const Tensor<T>& dy = out->grad;
      if (x->requires_grad)
        detail::acc(x->ensure_grad(),
                    kernels::conv2d_backward_input(dy, w->value, x->value.shape()));
      if (w->requires_grad)
        detail::acc(w->ensure_grad(),
                    kernels::conv2d_backward_weight(dy, x->value, w->value.shape()));
      if (b->requires_grad)
        detail::acc(b->ensure_grad(), kernels::conv2d_backward_bias(dy));
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& x) {
  auto out = make_var(kernels::relu_forward(x->value));
  if (detail::rec(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (!out->grad_ready) return;
      detail::acc(x->ensure_grad(), kernels::relu_backward(out->grad, x->value));
    });
  }
  return out;
}

/// Exponential-moving-average running statistics for batch normalization.
/// `initialized` flips on the first train-mode update (or on archive load);
/// inference before that is an error. Storage is shared-node so a parameter
/// registry can alias it.
template <typename T>
struct RunningStats {
  Var<T> mean, var;
  std::shared_ptr<bool> initialized;

  explicit RunningStats(int channels = 1)
      : mean(make_var(Tensor<T>::zeros({channels}))),
        var(make_var(Tensor<T>::full({channels}, T{1}))),
        initialized(std::make_shared<bool>(false)) {}
};

template <typename T>
Var<T> batchnorm(Tape<T>* tape, const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                 RunningStats<T>& running, Mode mode, T eps = static_cast<T>(1e-5),
                 T momentum = static_cast<T>(0.1)) {
  const int C = x->value.extent(1);
  if (gamma->value.numel() != static_cast<std::size_t>(C) ||
      beta->value.numel() != static_cast<std::size_t>(C))
    throw std::invalid_argument("batchnorm: gamma/beta length must equal channel count");
  if (eps <= T{}) throw std::invalid_argument("batchnorm: eps must be positive");

  Tensor<T> mean, var;
  if (mode == Mode::Train) {
    auto stats = kernels::bn_batch_stats(x->value);
    mean = std::move(stats.mean);
    var = std::move(stats.var);
    Tensor<T>& rm = running.mean->value;
    Tensor<T>& rv = running.var->value;
    for (int c = 0; c < C; ++c) {
      rm[c] = (T{1} - momentum) * rm[c] + momentum * mean[c];
      rv[c] = (T{1} - momentum) * rv[c] + momentum * var[c];
    }
    *running.initialized = true;
  } else {
    if (!*running.initialized)
      throw std::logic_error("batchnorm: inference requested before running statistics exist");
    mean = running.mean->value;
    var = running.var->value;
  }
  auto out = make_var(kernels::bn_normalize(x->value, mean, var, gamma->value, beta->value, eps));
  if (detail::rec(tape, {&x, &gamma, &beta})) {
    out->requires_grad = true;
    tape->record([x, gamma, beta, out, mean, var, eps, mode]() {
      if (!out->grad_ready) return;
      Tensor<T> dx = Tensor<T>::zeros(x->value.shape());
      Tensor<T> dgamma = Tensor<T>::zeros(gamma->value.shape());
      Tensor<T> dbeta = Tensor<T>::zeros(beta->value.shape());
      if (mode == Mode::Train)
        kernels::bn_backward_train(out->grad, x->value, mean, var, gamma->value, eps, dx, dgamma,
                                   dbeta);
      else
        kernels::bn_backward_infer(out->grad, x->value, mean, var, gamma->value, eps, dx, dgamma,
                                   dbeta);
      if (x->requires_grad) detail::acc(x->ensure_grad(), dx);
      if (gamma->requires_grad) detail::acc(gamma->ensure_grad(), dgamma);
      if (beta->requires_grad) detail::acc(beta->ensure_grad(), dbeta);
    });
  }
  return out;
}

template <typename T>
Var<T> maxpool2(Tape<T>* tape, const Var<T>& x) {
  Tensor<int32_t> argmax;
  auto out = make_var(kernels::maxpool2_forward(x->value, &argmax));
  if (detail::rec(tape, {&x})) {
    out->requires_grad = true;
    auto xshape = x->value.shape();
    tape->record([x, out, argmax = std::move(argmax), xshape]() {
      if (!out->grad_ready) return;
      detail::acc(x->ensure_grad(), kernels::maxpool2_backward(out->grad, argmax, xshape));
    });
  }
  return out;
}

template <typename T>
Var<T> bilinear_up2(Tape<T>* tape, const Var<T>& x) {
  auto out = make_var(kernels::bilinear_up2_forward(x->value));
  if (detail::rec(tape, {&x})) {
    out->requires_grad = true;
    auto xshape = x->value.shape();
    tape->record([x, out, xshape]() {
      if (!out->grad_ready) return;
      detail::acc(x->ensure_grad(), kernels::bilinear_up2_backward(out->grad, xshape));
    });
  }
  return out;
}

// The backward of a flip is the same flip applied to the upstream gradient
// (every kind is an involution).
template <typename T>
Var<T> flip_apply(Tape<T>* tape, const Var<T>& x, FlipKind kind) {
  auto out = make_var(kernels::flip_apply(x->value, kind));
  if (detail::rec(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out, kind]() {
      if (!out->grad_ready) return;
      detail::acc(x->ensure_grad(), kernels::flip_apply(out->grad, flip_inverse(kind)));
    });
  }
  return out;
}

template <typename T>
std::array<Var<T>, 4> split4(Tape<T>* tape, const Var<T>& x) {
  const int C = x->value.extent(1);
  if (C % 4 != 0)
    throw std::invalid_argument("split4: channel count " + std::to_string(C) +
                                " is not divisible by 4");
  const int q = C / 4;
  std::array<Var<T>, 4> parts;
  for (int i = 0; i < 4; ++i) {
    parts[i] = make_var(kernels::slice_channels(x->value, i * q, (i + 1) * q));
    if (detail::rec(tape, {&x})) {
      parts[i]->requires_grad = true;
      tape->record([x, p = parts[i], i, q]() {
        if (!p->grad_ready) return;
        Tensor<T>& dx = x->ensure_grad();
        const Tensor<T>& dy = p->grad;
        const int N = dx.extent(0), H = dx.extent(2), W = dx.extent(3);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        for (int n = 0; n < N; ++n) {
          T* d = &dx.at(n, i * q, 0, 0);
          const T* s = &dy.at(n, 0, 0, 0);
          for (std::size_t j = 0; j < q * plane; ++j) d[j] += s[j];
        }
      });
    }
  }
  return parts;
}

template <typename T>
Var<T> concat_channels(Tape<T>* tape, const std::vector<Var<T>>& parts) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p->value);
  auto out = make_var(kernels::concat_channels(ptrs));
  bool rec = false;
  if (tape)
    for (const auto& p : parts) rec = rec || p->requires_grad;
  if (rec) {
    out->requires_grad = true;
    tape->record([parts, out]() {
      if (!out->grad_ready) return;
      const Tensor<T>& dy = out->grad;
      const int N = dy.extent(0), H = dy.extent(2), W = dy.extent(3);
      const std::size_t plane = static_cast<std::size_t>(H) * W;
      int c0 = 0;
      for (const auto& p : parts) {
        const int pc = p->value.extent(1);
        if (p->requires_grad) {
          Tensor<T>& dx = p->ensure_grad();
          for (int n = 0; n < N; ++n) {
            const T* s = &dy.at(n, c0, 0, 0);
            T* d = &dx.at(n, 0, 0, 0);
            for (std::size_t j = 0; j < pc * plane; ++j) d[j] += s[j];
          }
        }
        c0 += pc;
      }
    });
  }
  return out;
}

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& x, const Var<T>& y) {
  if (!x->value.same_shape(y->value))
    throw std::invalid_argument("add: shape mismatch");
  Tensor<T> v(x->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = x->value[i] + y->value[i];
  auto out = make_var(std::move(v));
  if (detail::rec(tape, {&x, &y})) {
    out->requires_grad = true;
    tape->record([x, y, out]() {
      if (!out->grad_ready) return;
      if (x->requires_grad) detail::acc(x->ensure_grad(), out->grad);
      if (y->requires_grad) detail::acc(y->ensure_grad(), out->grad);
    });
  }
  return out;
}

template <typename T>
Var<T> mul_elementwise(Tape<T>* tape, const Var<T>& x, const Var<T>& y) {
  if (!x->value.same_shape(y->value))
    throw std::invalid_argument("mul_elementwise: shape mismatch");
  Tensor<T> v(x->value.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = x->value[i] * y->value[i];
  auto out = make_var(std::move(v));
  if (detail::rec(tape, {&x, &y})) {
    out->requires_grad = true;
    tape->record([x, y, out]() {
      if (!out->grad_ready) return;
      const Tensor<T>& dy = out->grad;
      if (x->requires_grad) {
        Tensor<T>& g = x->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += dy[i] * y->value[i];
      }
      if (y->requires_grad) {
        Tensor<T>& g = y->ensure_grad();
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] += dy[i] * x->value[i];
      }
    });
  }
  return out;
}

/// Sum of all entries; the scalar root used by losses and gradcheck.
template <typename T>
Var<T> sum_all(Tape<T>* tape, const Var<T>& x) {
  T s{};
  for (std::size_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
  auto out = make_var(Tensor<T>({1}, std::vector<T>{s}));
  if (detail::rec(tape, {&x})) {
    out->requires_grad = true;
    tape->record([x, out]() {
      if (!out->grad_ready) return;
      Tensor<T>& g = x->ensure_grad();
      const T up = out->grad[0];
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += up;
    });
  }
  return out;
}

}  // namespace ops
}  // namespace dtnet
