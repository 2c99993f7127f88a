#pragma once

// Forward/backward compute kernels on NCHW tensors. Hot loops are written so
// the innermost index runs contiguously over the width axis and parallel
// regions write disjoint slices; results are identical run-to-run regardless
// of thread count.

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtnet/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dtnet {

/// The four direction transforms of the MDIC part branches. Each one is an
/// involution, so the inverse transform is the transform itself.
enum class FlipKind { Identity, Transpose, Rot180, MirrorW };

inline FlipKind flip_inverse(FlipKind k) { return k; }

inline const char* flip_name(FlipKind k) {
  switch (k) {
    case FlipKind::Identity: return "identity";
    case FlipKind::Transpose: return "transpose";
    case FlipKind::Rot180: return "rot180";
    case FlipKind::MirrorW: return "mirror-w";
  }
  return "?";
}

namespace kernels {

template <typename T>
void require_4d(const Tensor<T>& t, const char* what) {
  if (t.ndim() != 4)
    throw std::invalid_argument(std::string(what) + ": expected a 4-d NCHW tensor, got " +
                                Tensor<T>::shape_str(t.shape()));
}

// ---------------------------------------------------------------------------
// Convolution, stride 1, same zero padding, odd square kernel.
// ---------------------------------------------------------------------------

template <typename T>
void check_conv_args(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_4d(x, "conv2d input");
  require_4d(w, "conv2d weight");
  const int k = w.extent(2);
  if (k != w.extent(3)) throw std::invalid_argument("conv2d: kernel must be square");
  if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel extent must be odd");
  if (w.extent(1) != x.extent(1))
    throw std::invalid_argument("conv2d: weight channels " + std::to_string(w.extent(1)) +
                                " do not match input channels " + std::to_string(x.extent(1)));
  if (b.ndim() != 1 || b.extent(0) != w.extent(0))
    throw std::invalid_argument("conv2d: bias length must equal filter count");
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  check_conv_args(x, w, b);
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const int F = w.extent(0), k = w.extent(2), p = (k - 1) / 2;
  Tensor<T> y({N, F, H, W});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int f = 0; f < F; ++f) {
      T* yp = &y.at(n, f, 0, 0);
      const T bias = b[f];
      for (int i = 0; i < H * W; ++i) yp[i] = bias;
      for (int c = 0; c < C; ++c) {
        for (int a = 0; a < k; ++a) {
          for (int bb = 0; bb < k; ++bb) {
            const T wv = w.at(f, c, a, bb);
            const int dj = bb - p;
            const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
            for (int i = 0; i < H; ++i) {
              const int ii = i + a - p;
              if (ii < 0 || ii >= H) continue;
              const T* xr = &x.at(n, c, ii, 0) + dj;
              T* yr = yp + i * W;
              for (int j = j0; j < j1; ++j) yr[j] += wv * xr[j];
            }
          }
        }
      }
    }
  }
  debug_check_finite(y, "conv2d");
  return y;
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& w,
                                const std::vector<int>& xshape) {
  const int N = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
  const int F = w.extent(0), k = w.extent(2), p = (k - 1) / 2;
  Tensor<T> dx(xshape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      T* dxp = &dx.at(n, c, 0, 0);
      for (int f = 0; f < F; ++f) {
        for (int a = 0; a < k; ++a) {
          for (int bb = 0; bb < k; ++bb) {
            const T wv = w.at(f, c, a, bb);
            const int dj = bb - p;
            const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
            for (int i = 0; i < H; ++i) {
              const int ii = i + a - p;
              if (ii < 0 || ii >= H) continue;
              const T* gr = &dy.at(n, f, i, 0);
              T* dr = dxp + ii * W + dj;
              for (int j = j0; j < j1; ++j) dr[j] += wv * gr[j];
            }
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> conv2d_backward_weight(const Tensor<T>& dy, const Tensor<T>& x,
                                 const std::vector<int>& wshape) {
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const int F = wshape[0], k = wshape[2], p = (k - 1) / 2;
  Tensor<T> dw(wshape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int f = 0; f < F; ++f) {
    for (int c = 0; c < C; ++c) {
      for (int a = 0; a < k; ++a) {
        for (int bb = 0; bb < k; ++bb) {
          const int dj = bb - p;
          const int j0 = std::max(0, -dj), j1 = std::min(W, W - dj);
          T acc = T{};
          for (int n = 0; n < N; ++n) {
            for (int i = 0; i < H; ++i) {
              const int ii = i + a - p;
              if (ii < 0 || ii >= H) continue;
              const T* gr = &dy.at(n, f, i, 0);
              const T* xr = &x.at(n, c, ii, 0) + dj;
              for (int j = j0; j < j1; ++j) acc += gr[j] * xr[j];
            }
          }
          dw.at(f, c, a, bb) = acc;
        }
      }
    }
  }
  return dw;
}

template <typename T>
Tensor<T> conv2d_backward_bias(const Tensor<T>& dy) {
  const int N = dy.extent(0), F = dy.extent(1), HW = dy.extent(2) * dy.extent(3);
  Tensor<T> db({F});
#pragma omp parallel for schedule(static)
  for (int f = 0; f < F; ++f) {
    T acc = T{};
    for (int n = 0; n < N; ++n) {
      const T* gp = &dy.at(n, f, 0, 0);
      for (int i = 0; i < HW; ++i) acc += gp[i];
    }
    db[f] = acc;
  }
  return db;
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    y[i] = x[i] > T{} ? x[i] : T{};
  return y;
}

// Gradient at exactly 0 is defined as 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& dy, const Tensor<T>& x) {
  Tensor<T> dx(x.shape());
  const std::size_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    dx[i] = x[i] > T{} ? dy[i] : T{};
  return dx;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Ties break to the first element in row-major
// window order.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, Tensor<int32_t>* argmax) {
  require_4d(x, "maxpool2");
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (H % 2 || W % 2) throw std::invalid_argument("maxpool2: spatial extents must be even");
  Tensor<T> y({N, C, H / 2, W / 2});
  if (argmax) *argmax = Tensor<int32_t>({N, C, H / 2, W / 2});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H / 2; ++i) {
        const T* r0 = x.data() + ((static_cast<std::size_t>(n) * C + c) * H + 2 * i) * W;
        const T* r1 = r0 + W;
        T* yr = y.data() + ((static_cast<std::size_t>(n) * C + c) * (H / 2) + i) * (W / 2);
        if (argmax) {
          int32_t* ar =
              argmax->data() + ((static_cast<std::size_t>(n) * C + c) * (H / 2) + i) * (W / 2);
          for (int j = 0; j < W / 2; ++j) {
            T best = r0[2 * j];
            int off = 0;
            if (r0[2 * j + 1] > best) { best = r0[2 * j + 1]; off = 1; }
            if (r1[2 * j] > best) { best = r1[2 * j]; off = 2; }
            if (r1[2 * j + 1] > best) { best = r1[2 * j + 1]; off = 3; }
            yr[j] = best;
            ar[j] = off;
          }
        } else {
          for (int j = 0; j < W / 2; ++j) {
            const T a = r0[2 * j] > r0[2 * j + 1] ? r0[2 * j] : r0[2 * j + 1];
            const T b = r1[2 * j] > r1[2 * j + 1] ? r1[2 * j] : r1[2 * j + 1];
            yr[j] = a > b ? a : b;
          }
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& dy, const Tensor<int32_t>& argmax,
                            const std::vector<int>& xshape) {
  Tensor<T> dx(xshape);
  const int N = xshape[0], C = xshape[1], Ho = dy.extent(2), Wo = dy.extent(3);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < Ho; ++i) {
        for (int j = 0; j < Wo; ++j) {
          const int off = argmax.at(n, c, i, j);
          dx.at(n, c, 2 * i + off / 2, 2 * j + off % 2) += dy.at(n, c, i, j);
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Bilinear x2 upsampling, half-pixel-center convention with edge clamping:
// source coordinate of output o is (o + 0.5) / 2 - 0.5.
// ---------------------------------------------------------------------------

struct BilinearTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

inline BilinearTap bilinear_tap(int o, int in_extent) {
  const double src = (o + 0.5) / 2.0 - 0.5;
  BilinearTap t;
  double f = std::floor(src);
  t.w1 = src - f;
  t.i0 = std::clamp(static_cast<int>(f), 0, in_extent - 1);
  t.i1 = std::clamp(static_cast<int>(f) + 1, 0, in_extent - 1);
  return t;
}

template <typename T>
Tensor<T> bilinear_up2_forward(const Tensor<T>& x) {
  require_4d(x, "bilinear_up2");
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  Tensor<T> y({N, C, 2 * H, 2 * W});
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < 2 * H; ++i) {
        const BilinearTap ti = bilinear_tap(i, H);
        for (int j = 0; j < 2 * W; ++j) {
          const BilinearTap tj = bilinear_tap(j, W);
          const double v =
              (1 - ti.w1) * ((1 - tj.w1) * x.at(n, c, ti.i0, tj.i0) + tj.w1 * x.at(n, c, ti.i0, tj.i1)) +
              ti.w1 * ((1 - tj.w1) * x.at(n, c, ti.i1, tj.i0) + tj.w1 * x.at(n, c, ti.i1, tj.i1));
          y.at(n, c, i, j) = static_cast<T>(v);
        }
      }
    }
  }
  return y;
}

// Transpose of the forward sampling operator.
template <typename T>
Tensor<T> bilinear_up2_backward(const Tensor<T>& dy, const std::vector<int>& xshape) {
  const int N = xshape[0], C = xshape[1], H = xshape[2], W = xshape[3];
  Tensor<T> dx(xshape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < 2 * H; ++i) {
        const BilinearTap ti = bilinear_tap(i, H);
        for (int j = 0; j < 2 * W; ++j) {
          const BilinearTap tj = bilinear_tap(j, W);
          const T g = dy.at(n, c, i, j);
          dx.at(n, c, ti.i0, tj.i0) += static_cast<T>((1 - ti.w1) * (1 - tj.w1)) * g;
          dx.at(n, c, ti.i0, tj.i1) += static_cast<T>((1 - ti.w1) * tj.w1) * g;
          dx.at(n, c, ti.i1, tj.i0) += static_cast<T>(ti.w1 * (1 - tj.w1)) * g;
          dx.at(n, c, ti.i1, tj.i1) += static_cast<T>(ti.w1 * tj.w1) * g;
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Spatial flips
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> flip_apply(const Tensor<T>& x, FlipKind kind) {
  require_4d(x, "flip_apply");
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (kind == FlipKind::Identity) return x;
  if (kind == FlipKind::Transpose && H != W)
    throw std::invalid_argument("flip_apply: transpose requires square spatial extent");
  Tensor<T> y(kind == FlipKind::Transpose ? std::vector<int>{N, C, W, H} : x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j) {
          const T v = x.at(n, c, i, j);
          switch (kind) {
            case FlipKind::Transpose: y.at(n, c, j, i) = v; break;
            case FlipKind::Rot180: y.at(n, c, H - 1 - i, W - 1 - j) = v; break;
            case FlipKind::MirrorW: y.at(n, c, i, W - 1 - j) = v; break;
            default: break;
          }
        }
      }
    }
  }
  return y;
}

/// Applies a flip to the two spatial axes of a [F,C,k,k] kernel tensor; used
/// by the flip-conjugation oracle.
template <typename T>
Tensor<T> flip_kernel(const Tensor<T>& w, FlipKind kind) {
  return flip_apply(w, kind);
}

// ---------------------------------------------------------------------------
// Channel split / concat
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  require_4d(x, "slice_channels");
  const int N = x.extent(0), H = x.extent(2), W = x.extent(3);
  Tensor<T> y({N, c1 - c0, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    std::copy_n(&x.at(n, c0, 0, 0), (c1 - c0) * plane, &y.at(n, 0, 0, 0));
  return y;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no parts");
  const int N = parts[0]->extent(0), H = parts[0]->extent(2), W = parts[0]->extent(3);
  int C = 0;
  for (const auto* p : parts) {
    require_4d(*p, "concat_channels");
    if (p->extent(0) != N || p->extent(2) != H || p->extent(3) != W)
      throw std::invalid_argument("concat_channels: batch/spatial extents must match");
    C += p->extent(1);
  }
  Tensor<T> y({N, C, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    int c = 0;
    for (const auto* p : parts) {
      std::copy_n(&p->at(n, 0, 0, 0), p->extent(1) * plane, &y.at(n, c, 0, 0));
      c += p->extent(1);
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel, population variance.
// ---------------------------------------------------------------------------

template <typename T>
struct BnStats {
  Tensor<T> mean, var;  // per-channel batch statistics
};

template <typename T>
BnStats<T> bn_batch_stats(const Tensor<T>& x) {
  require_4d(x, "batchnorm");
  const int N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  BnStats<T> s{Tensor<T>({C}), Tensor<T>({C})};
  const double count = static_cast<double>(N) * HW;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum = 0, sq = 0;
    for (int n = 0; n < N; ++n) {
      const T* p = &x.at(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        sum += static_cast<double>(p[i]);
        sq += static_cast<double>(p[i]) * p[i];
      }
    }
    const double mean = sum / count;
    s.mean[c] = static_cast<T>(mean);
    s.var[c] = static_cast<T>(sq / count - mean * mean);
  }
  return s;
}

template <typename T>
Tensor<T> bn_normalize(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var,
                       const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const int N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  Tensor<T> y(x.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + eps));
      const T g = gamma[c], m = mean[c], bt = beta[c];
      const T* xp = &x.at(n, c, 0, 0);
      T* yp = &y.at(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) yp[i] = (xp[i] - m) * inv * g + bt;
    }
  }
  debug_check_finite(y, "batchnorm");
  return y;
}

/// Train-mode backward. Gradients follow the standard batch-norm chain rule
/// with the batch mean/variance treated as functions of x.
template <typename T>
void bn_backward_train(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& mean,
                       const Tensor<T>& var, const Tensor<T>& gamma, T eps, Tensor<T>& dx,
                       Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  const double count = static_cast<double>(N) * HW;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + eps);
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* dyp = &dy.at(n, c, 0, 0);
      const T* xp = &x.at(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        const double xh = (xp[i] - mean[c]) * inv;
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * xh;
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
    const double g = gamma[c];
    for (int n = 0; n < N; ++n) {
      const T* dyp = &dy.at(n, c, 0, 0);
      const T* xp = &x.at(n, c, 0, 0);
      T* dxp = &dx.at(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        const double xh = (xp[i] - mean[c]) * inv;
        dxp[i] += static_cast<T>(g * inv * (dyp[i] - sum_dy / count - xh * sum_dy_xhat / count));
      }
    }
  }
}

template <typename T>
void bn_backward_infer(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& mean,
                       const Tensor<T>& var, const Tensor<T>& gamma, T eps, Tensor<T>& dx,
                       Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const int N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    const double inv = 1.0 / std::sqrt(static_cast<double>(var[c]) + eps);
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < N; ++n) {
      const T* dyp = &dy.at(n, c, 0, 0);
      const T* xp = &x.at(n, c, 0, 0);
      T* dxp = &dx.at(n, c, 0, 0);
      for (int i = 0; i < HW; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * (xp[i] - mean[c]) * inv;
        dxp[i] += static_cast<T>(gamma[c] * inv * dyp[i]);
      }
    }
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    dbeta[c] += static_cast<T>(sum_dy);
  }
}

}  // namespace kernels
}  // namespace dtnet
