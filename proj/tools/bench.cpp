// Times the parallel kernels against the naive serial reference and checks
// that both produce identical results on the benchmarked inputs.

#include <chrono>
#include <cstdio>
#include <random>

#include "dtnet/kernels.hpp"
#include "dtnet/reference.hpp"

using namespace dtnet;
using clk = std::chrono::steady_clock;

namespace {

template <typename F>
double time_best_of(int reps, F&& fn) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clk::now();
    fn();
    best = std::min(best, std::chrono::duration<double>(clk::now() - t0).count());
  }
  return best;
}

bool close(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

int main() {
  std::mt19937 rng(7);
  int failures = 0;
  std::printf("%-28s %10s %10s %8s  %s\n", "kernel", "serial(s)", "parallel", "speedup",
              "match");

  auto report = [&](const char* name, double ts, double tp, bool ok) {
    std::printf("%-28s %10.4f %10.4f %7.2fx  %s\n", name, ts, tp, ts / tp, ok ? "yes" : "NO");
    if (!ok) ++failures;
  };

  {
    auto x = Tensor<float>::uniform({4, 16, 64, 64}, -1.f, 1.f, rng);
    auto w = Tensor<float>::uniform({32, 16, 3, 3}, -1.f, 1.f, rng);
    auto b = Tensor<float>::uniform({32}, -1.f, 1.f, rng);
    Tensor<float> ys, yp;
    const double ts = time_best_of(3, [&] { ys = reference::conv2d(x, w, b); });
    const double tp = time_best_of(3, [&] { yp = kernels::conv2d_forward(x, w, b); });
    report("conv2d 16->32 k3 64x64", ts, tp, close(ys, yp));
  }
  {
    auto x = Tensor<float>::uniform({4, 8, 64, 64}, -1.f, 1.f, rng);
    auto w = Tensor<float>::uniform({16, 8, 7, 7}, -1.f, 1.f, rng);
    auto b = Tensor<float>::uniform({16}, -1.f, 1.f, rng);
    Tensor<float> ys, yp;
    const double ts = time_best_of(3, [&] { ys = reference::conv2d(x, w, b); });
    const double tp = time_best_of(3, [&] { yp = kernels::conv2d_forward(x, w, b); });
    report("conv2d 8->16 k7 64x64", ts, tp, close(ys, yp));
  }
  {
    auto x = Tensor<float>::uniform({8, 32, 128, 128}, -1.f, 1.f, rng);
    Tensor<float> ys, yp;
    const double ts = time_best_of(5, [&] { ys = reference::maxpool2(x); });
    const double tp = time_best_of(5, [&] {
      yp = kernels::maxpool2_forward(x, static_cast<Tensor<int32_t>*>(nullptr));
    });
    report("maxpool2 32ch 128x128", ts, tp, close(ys, yp));
  }
  {
    auto x = Tensor<float>::uniform({8, 32, 64, 64}, -1.f, 1.f, rng);
    Tensor<float> ys, yp;
    const double ts = time_best_of(5, [&] { ys = reference::bilinear_up2(x); });
    const double tp = time_best_of(5, [&] { yp = kernels::bilinear_up2_forward(x); });
    report("bilinear_up2 32ch 64x64", ts, tp, close(ys, yp));
  }

  if (failures) {
    std::printf("%d kernel(s) diverged from the reference\n", failures);
    return 1;
  }
  return 0;
}
