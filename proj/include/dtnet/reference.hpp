#pragma once

// Serial reference implementations, kept deliberately naive (one accumulator
// per output element, no parallelism). The test suites compare the OpenMP
// kernels against these, and the benchmark tool measures the gap.

#include <vector>

#include "dtnet/tensor.hpp"

namespace dtnet::reference {

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  const int F = w.extent(0), k = w.extent(2), p = (k - 1) / 2;
  Tensor<T> y({N, F, H, W});
  for (int n = 0; n < N; ++n)
    for (int f = 0; f < F; ++f)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          T acc = b[f];
          for (int c = 0; c < C; ++c)
            for (int a = 0; a < k; ++a)
              for (int bb = 0; bb < k; ++bb) {
                const int ii = i + a - p, jj = j + bb - p;
                if (ii < 0 || ii >= H || jj < 0 || jj >= W) continue;
                acc += w.at(f, c, a, bb) * x.at(n, c, ii, jj);
              }
          y.at(n, f, i, j) = acc;
        }
  return y;
}

template <typename T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  Tensor<T> y({N, C, H / 2, W / 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H / 2; ++i)
        for (int j = 0; j < W / 2; ++j) {
          T best = x.at(n, c, 2 * i, 2 * j);
          for (int a = 0; a < 2; ++a)
            for (int bb = 0; bb < 2; ++bb)
              if (x.at(n, c, 2 * i + a, 2 * j + bb) > best)
                best = x.at(n, c, 2 * i + a, 2 * j + bb);
          y.at(n, c, i, j) = best;
        }
  return y;
}

template <typename T>
Tensor<T> bilinear_up2(const Tensor<T>& x) {
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  Tensor<T> y({N, C, 2 * H, 2 * W});
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j) {
          const double si = (i + 0.5) / 2.0 - 0.5, sj = (j + 0.5) / 2.0 - 0.5;
          const int i0 = static_cast<int>(std::floor(si)), j0 = static_cast<int>(std::floor(sj));
          const double wi = si - i0, wj = sj - j0;
          const int ia = clampi(i0, H - 1), ib = clampi(i0 + 1, H - 1);
          const int ja = clampi(j0, W - 1), jb = clampi(j0 + 1, W - 1);
          y.at(n, c, i, j) = static_cast<T>(
              (1 - wi) * ((1 - wj) * x.at(n, c, ia, ja) + wj * x.at(n, c, ia, jb)) +
              wi * ((1 - wj) * x.at(n, c, ib, ja) + wj * x.at(n, c, ib, jb)));
        }
  return y;
}

/// Naive per-channel batch normalization (train-mode statistics).
template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                          T eps) {
  const int N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  Tensor<T> y(x.shape());
  for (int c = 0; c < C; ++c) {
    double sum = 0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) sum += x.at(n, c, i, j);
    const double mean = sum / (static_cast<double>(N) * H * W);
    double var = 0;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
          const double d = x.at(n, c, i, j) - mean;
          var += d * d;
        }
    var /= static_cast<double>(N) * H * W;
    for (int n = 0; n < N; ++n)
      for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
          y.at(n, c, i, j) = static_cast<T>(
              (x.at(n, c, i, j) - mean) / std::sqrt(var + static_cast<double>(eps)) * gamma[c] +
              beta[c]);
  }
  return y;
}

}  // namespace dtnet::reference
