#pragma once

// Threshold convolution and the encoder/decoder multi-directional
// integrated convolution (MDIC) modules.
//
// Each MDIC part branch flips its channel quarter (identity / transpose /
// rot-180 / width mirror, in part order), convolves, and flips back. With
// multi_scale on (the default) every part applies all four kernel sizes as a
// summed filter bank sharing one bias; with it off, part i uses
// part_kernels[i] alone.

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtnet/autograd.hpp"
#include "dtnet/params.hpp"

namespace dtnet {

struct ThresholdSpec {
  double value = 0.1;
  enum class Variant { Hard, Epsilon } variant = Variant::Epsilon;
  double epsilon = 1e-10;

  void validate() const {
    if (value < 0) throw std::invalid_argument("threshold: T must be non-negative");
    if (epsilon <= 0) throw std::invalid_argument("threshold: epsilon must be positive");
  }
};

struct MdicConfig {
  std::array<int, 4> part_kernels{1, 3, 5, 7};
  int global_kernel = 3;
  int in_channels = 0;
  int out_channels = 0;
  // All four part kernel sizes per direction (summed filter bank) when true;
  // one kernel size per direction when false.
  bool multi_scale = true;

  void validate() const {
    if (out_channels % 4 != 0)
      throw std::invalid_argument("mdic: out_channels must be divisible by 4");
    if (in_channels < 1) throw std::invalid_argument("mdic: in_channels must be positive");
    for (int k : part_kernels)
      if (k < 1 || k % 2 == 0)
        throw std::invalid_argument("mdic: part kernels must be odd and positive");
    if (global_kernel < 1 || global_kernel % 2 == 0)
      throw std::invalid_argument("mdic: global kernel must be odd and positive");
    bool differs = false;
    for (int k : part_kernels) differs = differs || (k != global_kernel);
    if (!differs)
      throw std::invalid_argument("mdic: global kernel must differ from at least one part kernel");
  }
};

constexpr std::array<FlipKind, 4> kPartFlips{FlipKind::Identity, FlipKind::Transpose,
                                             FlipKind::Rot180, FlipKind::MirrorW};

// ---------------------------------------------------------------------------
// threshold convolution
// ---------------------------------------------------------------------------

/// Masks every entry whose ReLU response does not exceed spec.value; survivors
/// pass through unchanged. The epsilon variant floors masked entries at
/// spec.epsilon instead of zero. The mask is a constant in backward: gradient
/// flows only where the mask is 1.
template <typename T>
Var<T> threshold_conv(Tape<T>* tape, const Var<T>& x, const ThresholdSpec& spec) {
  spec.validate();
  const T t = static_cast<T>(spec.value);
  const T eps = static_cast<T>(spec.epsilon);
  const bool epsilon_variant = spec.variant == ThresholdSpec::Variant::Epsilon;
  const std::size_t n = x->value.numel();

  // relu(x) > T  <=>  x > T for T >= 0.
  auto mask = std::make_shared<std::vector<uint8_t>>(n);
  Tensor<T> out_v(x->value.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const bool keep = x->value[i] > t;
    (*mask)[i] = keep;
    out_v[i] = keep ? x->value[i] : (epsilon_variant ? eps : T{});
  }
  auto out = make_var(std::move(out_v));
  if (tape && x->requires_grad) {
    out->requires_grad = true;
    tape->record([x, out, mask]() {
      if (!out->grad_ready) return;
      Tensor<T>& g = x->ensure_grad();
      for (std::size_t i = 0; i < g.numel(); ++i)
        if ((*mask)[i]) g[i] += out->grad[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <typename T>
struct ConvLayer {
  Var<T> w, b;
  int kernel() const { return w->value.extent(2); }
};

template <typename T>
struct BnLayer {
  Var<T> gamma, beta;
  ops::RunningStats<T> running;
};

template <typename T>
Tensor<T> he_uniform(std::vector<int> shape, int fan_in, std::mt19937& rng) {
  const T limit = static_cast<T>(std::sqrt(6.0 / fan_in));
  return Tensor<T>::uniform(std::move(shape), -limit, limit, rng);
}

template <typename T>
ConvLayer<T> make_conv(ParamStore<T>& ps, const std::string& prefix, int cin, int cout, int k,
                       std::mt19937& rng, bool bias = true) {
  ConvLayer<T> layer;
  layer.w = ps.add(prefix + "/weight", he_uniform<T>({cout, cin, k, k}, cin * k * k, rng));
  if (bias) layer.b = ps.add(prefix + "/bias", Tensor<T>::zeros({cout}));
  return layer;
}

template <typename T>
BnLayer<T> make_bn(ParamStore<T>& ps, const std::string& prefix, int c) {
  BnLayer<T> bn;
  bn.gamma = ps.add(prefix + "/gamma", Tensor<T>::full({c}, T{1}));
  bn.beta = ps.add(prefix + "/beta", Tensor<T>::zeros({c}));
  bn.running = ops::RunningStats<T>(c);
  ps.add_existing(prefix + "/running_mean", bn.running.mean, false);
  ps.add_existing(prefix + "/running_var", bn.running.var, false);
  return bn;
}

template <typename T>
Var<T> apply_bn(Tape<T>* tape, const Var<T>& x, BnLayer<T>& bn, Mode mode) {
  return ops::batchnorm(tape, x, bn.gamma, bn.beta, bn.running, mode);
}

/// One directional branch: flip, convolve with the scale bank (one shared
/// bias), ReLU, BN, inverse flip.
template <typename T>
struct PartBranch {
  std::vector<Var<T>> weights;  // one [F,C,k,k] tensor per scale
  Var<T> bias;
  BnLayer<T> bn;
  FlipKind flip = FlipKind::Identity;
};

template <typename T>
PartBranch<T> make_part_branch(ParamStore<T>& ps, const std::string& prefix, int cin, int cout,
                               const std::vector<int>& kernels, FlipKind flip,
                               std::mt19937& rng) {
  PartBranch<T> br;
  br.flip = flip;
  // The per-kernel responses are summed, so the effective fan-in of the
  // branch is the sum over all kernel sizes.
  int fan_in = 0;
  for (int k : kernels) fan_in += cin * k * k;
  for (std::size_t s = 0; s < kernels.size(); ++s) {
    const int k = kernels[s];
    br.weights.push_back(ps.add(prefix + "/conv" + std::to_string(s) + "/weight",
                                he_uniform<T>({cout, cin, k, k}, fan_in, rng)));
  }
  br.bias = ps.add(prefix + "/bias", Tensor<T>::zeros({cout}));
  br.bn = make_bn(ps, prefix + "/bn", cout);
  return br;
}

template <typename T>
Var<T> part_branch_forward(Tape<T>* tape, const Var<T>& x, PartBranch<T>& br, Mode mode) {
  Var<T> xf = ops::flip_apply(tape, x, br.flip);
  Var<T> acc = ops::conv2d(tape, xf, br.weights[0], br.bias);
  if (br.weights.size() > 1) {
    auto zero = make_var(Tensor<T>::zeros({br.weights[0]->value.extent(0)}));
    for (std::size_t s = 1; s < br.weights.size(); ++s)
      acc = ops::add(tape, acc, ops::conv2d(tape, xf, br.weights[s], zero));
  }
  Var<T> y = apply_bn(tape, ops::relu(tape, acc), br.bn, mode);
  return ops::flip_apply(tape, y, flip_inverse(br.flip));
}

namespace detail {
inline std::vector<int> part_scales(const MdicConfig& cfg, int part) {
  if (cfg.multi_scale)
    return {cfg.part_kernels.begin(), cfg.part_kernels.end()};
  return {cfg.part_kernels[part]};
}
}  // namespace detail

// ---------------------------------------------------------------------------
// encoder module (EM)
// ---------------------------------------------------------------------------

template <typename T>
struct EmParams {
  MdicConfig cfg;
  ThresholdSpec threshold;
  bool mdic_enabled = true;
  bool threshold_enabled = true;
  // When the input channel count is not divisible by 4, every part consumes
  // the full input instead of a quarter slice.
  bool split_input = true;

  std::array<PartBranch<T>, 4> parts;  // mdic form
  PartBranch<T> plain;                 // no-mdic substitute: one unsplit branch
  ConvLayer<T> global_conv;
  BnLayer<T> global_bn;
  ConvLayer<T> integ_a;
  BnLayer<T> integ_a_bn;
  ConvLayer<T> integ_b;
  BnLayer<T> integ_b_bn;
};

template <typename T>
EmParams<T> make_em(ParamStore<T>& ps, const std::string& prefix, MdicConfig cfg,
                    ThresholdSpec threshold, std::mt19937& rng, bool mdic_enabled = true,
                    bool threshold_enabled = true) {
  cfg.validate();
  threshold.validate();
  EmParams<T> em;
  em.cfg = cfg;
  em.threshold = threshold;
  em.mdic_enabled = mdic_enabled;
  em.threshold_enabled = threshold_enabled;
  em.split_input = cfg.in_channels % 4 == 0;
  const int F = cfg.out_channels;
  if (mdic_enabled) {
    const int part_in = em.split_input ? cfg.in_channels / 4 : cfg.in_channels;
    for (int i = 0; i < 4; ++i)
      em.parts[i] = make_part_branch(ps, prefix + "/part" + std::to_string(i + 1), part_in, F / 4,
                                     detail::part_scales(cfg, i), kPartFlips[i], rng);
  } else {
    std::vector<int> all(cfg.part_kernels.begin(), cfg.part_kernels.end());
    em.plain = make_part_branch(ps, prefix + "/plain", cfg.in_channels, F, all,
                                FlipKind::Identity, rng);
  }
  em.global_conv = make_conv(ps, prefix + "/global/conv", cfg.in_channels, F, cfg.global_kernel, rng);
  em.global_bn = make_bn(ps, prefix + "/global/bn", F);
  em.integ_a = make_conv(ps, prefix + "/integ_a/conv", 2 * F, F, 1, rng);
  em.integ_a_bn = make_bn(ps, prefix + "/integ_a/bn", F);
  em.integ_b = make_conv(ps, prefix + "/integ_b/conv", F, F, 1, rng);
  em.integ_b_bn = make_bn(ps, prefix + "/integ_b/bn", F);
  return em;
}

template <typename T>
struct EmOutput {
  Var<T> skip;  // pre-pool, input spatial extent, F channels
  Var<T> out;   // pooled, half extent
};

template <typename T>
EmOutput<T> em_forward(Tape<T>* tape, const Var<T>& x, EmParams<T>& em, Mode mode) {
  kernels::require_4d(x->value, "em_forward");
  const int C = x->value.extent(1), H = x->value.extent(2), W = x->value.extent(3);
  if (C != em.cfg.in_channels)
    throw std::invalid_argument("em_forward: expected " + std::to_string(em.cfg.in_channels) +
                                " channels, got " + std::to_string(C));
  if (H != W) throw std::invalid_argument("em_forward: input must be square");
  if (H % 2 != 0) throw std::invalid_argument("em_forward: spatial extent must be even");

  Var<T> g = apply_bn(tape, ops::relu(tape, ops::conv2d(tape, x, em.global_conv.w, em.global_conv.b)),
                      em.global_bn, mode);

  std::vector<Var<T>> fused;
  if (em.mdic_enabled) {
    std::array<Var<T>, 4> xs;
    if (em.split_input) {
      xs = ops::split4(tape, x);
    } else {
      xs = {x, x, x, x};
    }
    for (int i = 0; i < 4; ++i)
      fused.push_back(part_branch_forward(tape, xs[i], em.parts[i], mode));
  } else {
    fused.push_back(part_branch_forward(tape, x, em.plain, mode));
  }
  fused.push_back(g);

  Var<T> cat = ops::concat_channels(tape, fused);
  Var<T> u = apply_bn(tape, ops::relu(tape, ops::conv2d(tape, cat, em.integ_a.w, em.integ_a.b)),
                      em.integ_a_bn, mode);
  Var<T> t = em.threshold_enabled ? threshold_conv(tape, u, em.threshold) : u;
  EmOutput<T> out;
  out.skip = apply_bn(tape, ops::relu(tape, ops::conv2d(tape, t, em.integ_b.w, em.integ_b.b)),
                      em.integ_b_bn, mode);
  out.out = ops::maxpool2(tape, out.skip);
  return out;
}

// ---------------------------------------------------------------------------
// decoder module (DM): upsample, mine directions, fuse the encoder skip as a
// residual per channel quarter, splice with the retained map. No threshold.
// ---------------------------------------------------------------------------

template <typename T>
struct DmParams {
  MdicConfig cfg;
  bool mdic_enabled = true;

  std::array<PartBranch<T>, 4> parts;
  PartBranch<T> plain;
  ConvLayer<T> retain;  // 1x1, keeps the original upsampled information
  ConvLayer<T> fusion;
  BnLayer<T> fusion_bn;
};

template <typename T>
DmParams<T> make_dm(ParamStore<T>& ps, const std::string& prefix, MdicConfig cfg,
                    std::mt19937& rng, bool mdic_enabled = true) {
  cfg.validate();
  if (cfg.in_channels % 4 != 0)
    throw std::invalid_argument("dm: in_channels must be divisible by 4");
  DmParams<T> dm;
  dm.cfg = cfg;
  dm.mdic_enabled = mdic_enabled;
  const int F = cfg.out_channels;
  if (mdic_enabled) {
    for (int i = 0; i < 4; ++i)
      dm.parts[i] = make_part_branch(ps, prefix + "/part" + std::to_string(i + 1),
                                     cfg.in_channels / 4, F / 4, detail::part_scales(cfg, i),
                                     kPartFlips[i], rng);
  } else {
    std::vector<int> all(cfg.part_kernels.begin(), cfg.part_kernels.end());
    dm.plain = make_part_branch(ps, prefix + "/plain", cfg.in_channels, F, all,
                                FlipKind::Identity, rng);
  }
  dm.retain = make_conv(ps, prefix + "/retain/conv", cfg.in_channels, F, 1, rng);
  dm.fusion = make_conv(ps, prefix + "/fusion/conv", 2 * F, F, 1, rng);
  dm.fusion_bn = make_bn(ps, prefix + "/fusion/bn", F);
  return dm;
}

template <typename T>
Var<T> dm_forward(Tape<T>* tape, const Var<T>& x, const Var<T>& skip, DmParams<T>& dm,
                  Mode mode) {
  kernels::require_4d(x->value, "dm_forward");
  const int F = dm.cfg.out_channels;
  const int h = x->value.extent(2), w = x->value.extent(3);
  if (x->value.extent(1) != dm.cfg.in_channels)
    throw std::invalid_argument("dm_forward: wrong input channel count");
  if (h != w) throw std::invalid_argument("dm_forward: input must be square");
  if (skip->value.extent(1) != F || skip->value.extent(2) != 2 * h ||
      skip->value.extent(3) != 2 * w || skip->value.extent(0) != x->value.extent(0))
    throw std::invalid_argument(
        "dm_forward: skip must be [N," + std::to_string(F) + "," + std::to_string(2 * h) + "," +
        std::to_string(2 * w) + "], got " + Tensor<T>::shape_str(skip->value.shape()));

  Var<T> u = ops::bilinear_up2(tape, x);
  Var<T> r = ops::conv2d(tape, u, dm.retain.w, dm.retain.b);

  std::vector<Var<T>> fused;
  if (dm.mdic_enabled) {
    auto us = ops::split4(tape, u);
    auto ss = ops::split4(tape, skip);
    for (int i = 0; i < 4; ++i) {
      Var<T> d = part_branch_forward(tape, us[i], dm.parts[i], mode);
      fused.push_back(ops::add(tape, d, ss[i]));
    }
  } else {
    Var<T> d = part_branch_forward(tape, u, dm.plain, mode);
    fused.push_back(ops::add(tape, d, skip));
  }
  fused.push_back(r);

  Var<T> cat = ops::concat_channels(tape, fused);
  return apply_bn(tape, ops::relu(tape, ops::conv2d(tape, cat, dm.fusion.w, dm.fusion.b)),
                  dm.fusion_bn, mode);
}

}  // namespace dtnet
