#pragma once

// Softmax cross-entropy, Adam, and the deterministic training/evaluation
// loops plus the threshold-sweep and strategy-ablation harnesses.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtnet/dataio.hpp"
#include "dtnet/metrics.hpp"
#include "dtnet/model.hpp"

namespace dtnet {

/// Mean over pixels of -log softmax(logits)[truth], stabilized by per-pixel
/// max subtraction. Gradient is (softmax - one-hot) / pixel-count.
template <typename T>
Var<T> softmax_xent(Tape<T>* tape, const Var<T>& logits, const Tensor<uint8_t>& truth) {
  kernels::require_4d(logits->value, "softmax_xent");
  const int N = logits->value.extent(0), C = logits->value.extent(1);
  const int H = logits->value.extent(2), W = logits->value.extent(3);
  if (truth.ndim() != 3 || truth.extent(0) != N || truth.extent(1) != H || truth.extent(2) != W)
    throw std::invalid_argument("softmax_xent: truth must be [N,H,W] matching the logits");
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double count = static_cast<double>(N) * plane;
  for (std::size_t i = 0; i < truth.numel(); ++i)
    if (truth[i] >= C)
      throw std::invalid_argument("softmax_xent: label " + std::to_string(truth[i]) +
                                  " out of range for " + std::to_string(C) + " classes");

  auto softmax = std::make_shared<Tensor<T>>(logits->value.shape());
  double loss = 0;
#pragma omp parallel for collapse(2) schedule(static) reduction(+ : loss)
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < H; ++i) {
      for (int j = 0; j < W; ++j) {
        const int label = truth[(static_cast<std::size_t>(n) * H + i) * W + j];
        double m = logits->value.at(n, 0, i, j);
        for (int c = 1; c < C; ++c) m = std::max(m, static_cast<double>(logits->value.at(n, c, i, j)));
        double z = 0;
        for (int c = 0; c < C; ++c) z += std::exp(static_cast<double>(logits->value.at(n, c, i, j)) - m);
        for (int c = 0; c < C; ++c)
          softmax->at(n, c, i, j) =
              static_cast<T>(std::exp(static_cast<double>(logits->value.at(n, c, i, j)) - m) / z);
        loss += m + std::log(z) - logits->value.at(n, label, i, j);
      }
    }
  }
  auto out = make_var(Tensor<T>({1}, std::vector<T>{static_cast<T>(loss / count)}));
  if (tape && logits->requires_grad) {
    out->requires_grad = true;
    Tensor<uint8_t> labels = truth;
    tape->record([logits, out, softmax, labels, count]() {
      if (!out->grad_ready) return;
      const int N = logits->value.extent(0), C = logits->value.extent(1);
      const int H = logits->value.extent(2), W = logits->value.extent(3);
      Tensor<T>& g = logits->ensure_grad();
      const T up = static_cast<T>(out->grad[0] / count);
      for (int n = 0; n < N; ++n)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const int label = labels[(static_cast<std::size_t>(n) * H + i) * W + j];
            for (int c = 0; c < C; ++c)
              g.at(n, c, i, j) += up * (softmax->at(n, c, i, j) - (c == label ? T{1} : T{0}));
          }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  explicit Adam(double lr_ = 1e-3) : lr(lr_) {}

  /// One update over the trainable entries of the store. Aborts on
  /// non-finite gradients.
  void step(ParamStore<T>& ps) {
    if (m_.empty()) {
      for (const auto& e : ps.entries())
        if (e.trainable) {
          m_.push_back(Tensor<T>::zeros(e.var->value.shape()));
          v_.push_back(Tensor<T>::zeros(e.var->value.shape()));
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    std::size_t slot = 0;
    for (const auto& e : ps.entries()) {
      if (!e.trainable) continue;
      Tensor<T>& m = m_[slot];
      Tensor<T>& v = v_[slot];
      ++slot;
      Tensor<T>& p = e.var->value;
      const bool has_grad = e.var->grad_ready;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double g = has_grad ? static_cast<double>(e.var->grad[i]) : 0.0;
        if (!std::isfinite(g))
          throw std::domain_error("adam: non-finite gradient in parameter " + e.name +
                                   " at coordinate " + std::to_string(i));
        const double mi = beta1 * m[i] + (1 - beta1) * g;
        const double vi = beta2 * v[i] + (1 - beta2) * g * g;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        p[i] = static_cast<T>(p[i] - lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps));
      }
    }
  }

  int64_t steps() const { return t_; }

 private:
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct TrainOptions {
  int epochs = 40;
  int batch_size = 4;
  double lr = 1e-3;
  uint64_t seed = 1;
  int checkpoint_every = 0;        // epochs; 0 disables
  std::string out_dir;             // curve CSV / checkpoints / manifest; empty = no files
  bool quiet = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0, train_dice = 0;  // train-mode loss and macro dice
  double test_loss = 0, test_dice_macro = 0, test_dice_micro = 0;
};

struct TrainRun {
  std::vector<EpochRecord> records;
  double wall_seconds = 0;
  uint64_t train_digest = 0, test_digest = 0;
};

struct EvalResult {
  double loss = 0;
  double mean_dice_macro = 0;  // mean over foreground classes of macro dice
  double mean_dice_micro = 0;
  std::vector<std::pair<int, metrics::ClassScores>> per_class_micro;
  std::vector<std::pair<int, metrics::ClassScores>> per_class_macro;
};

Tensor<uint8_t> argmax_labels(const Tensor<float>& logits);  // [N,C,H,W] -> [N,H,W]

EvalResult evaluate(DtNet<float>& net, const io::Dataset& data, int batch_size);

TrainRun train_model(DtNet<float>& net, const io::Dataset& train_set,
                     const io::Dataset& test_set, const TrainOptions& opt);

/// 3:2 split in manifest order (the shuffle lives in the training loop).
void split_dataset(const io::Dataset& all, io::Dataset& train, io::Dataset& test);

// ---------------------------------------------------------------------------
// harnesses
// ---------------------------------------------------------------------------

/// One seeded run per threshold; a threshold of exactly 0 is the sentinel for
/// "threshold layer disabled". Emits one curve CSV per run under out_dir.
void threshold_sweep(const DtNetConfig& base, const std::vector<double>& thresholds,
                     const io::Dataset& train_set, const io::Dataset& test_set,
                     const TrainOptions& opt);

struct AblationRow {
  std::string name;
  std::size_t param_count = 0;
  double final_loss = 0, final_dice = 0;
};

/// The six strategy variants: full, hard-threshold (*), no-mdic (no-1),
/// no-threshold (no-2), no-skip (no-3), and no-mdic-no-threshold (no-1-2),
/// trained with a shared seed.
std::vector<AblationRow> ablation_suite(const DtNetConfig& base, const io::Dataset& train_set,
                                        const io::Dataset& test_set, const TrainOptions& opt);

}  // namespace dtnet
