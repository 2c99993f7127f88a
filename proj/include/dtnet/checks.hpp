#pragma once

// Named gradient-check scenarios over the differentiable primitives and the
// assembled modules, shared by the CLI and the verification binaries. All
// scenarios run in real-64 with central differences.

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dtnet/autograd.hpp"
#include "dtnet/gradcheck.hpp"
#include "dtnet/mdic.hpp"
#include "dtnet/model.hpp"
#include "dtnet/train.hpp"

namespace dtnet::checks {

namespace detail {

inline Var<double> randn_var(std::mt19937& rng, const std::vector<int>& shape, double lo = -1.0,
                             double hi = 1.0) {
  return make_var(Tensor<double>::uniform(shape, lo, hi, rng), true);
}

inline Var<double> sumsq(Tape<double>* tape, const Var<double>& y) {
  return ops::sum_all(tape, ops::mul_elementwise(tape, y, y));
}

/// Keeps every entry at least `margin` away from the threshold so the finite
/// difference never crosses the mask boundary.
inline void clear_margin(Tensor<double>& t, double threshold, double margin) {
  for (std::size_t i = 0; i < t.numel(); ++i)
    if (std::abs(t[i] - threshold) < margin)
      t[i] = threshold + (t[i] >= threshold ? margin : -margin);
}

/// Freshly built modules sit exactly on ReLU kinks (zero biases can leave a
/// whole channel dead), where one-sided jumps corrupt central differences.
/// Jittering every trainable value moves the probe off those boundaries.
inline void jitter_params(ParamStore<double>& ps, std::mt19937& rng) {
  std::uniform_real_distribution<double> d(-0.2, 0.2);
  for (const auto& e : ps.entries())
    if (e.trainable)
      for (std::size_t i = 0; i < e.var->value.numel(); ++i) e.var->value[i] += d(rng);
}

}  // namespace detail

inline GradCheckReport check_conv(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  auto x = detail::randn_var(rng, {2, 3, 6, 6});
  auto w = detail::randn_var(rng, {4, 3, 3, 3});
  auto b = detail::randn_var(rng, {4});
  return gradcheck(
      [&](Tape<double>* t) { return detail::sumsq(t, ops::conv2d(t, x, w, b)); }, {x, w, b});
}

inline GradCheckReport check_relu(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  auto x = detail::randn_var(rng, {2, 3, 5, 5});
  detail::clear_margin(x->value, 0.0, 1e-3);
  return gradcheck([&](Tape<double>* t) { return detail::sumsq(t, ops::relu(t, x)); }, {x});
}

inline GradCheckReport check_bn(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  auto x = detail::randn_var(rng, {2, 3, 4, 4});
  auto gamma = detail::randn_var(rng, {3}, 0.5, 1.5);
  auto beta = detail::randn_var(rng, {3});
  ops::RunningStats<double> running(3);
  return gradcheck(
      [&](Tape<double>* t) {
        return detail::sumsq(t, ops::batchnorm(t, x, gamma, beta, running, Mode::Train));
      },
      {x, gamma, beta});
}

inline GradCheckReport check_pool(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  // Continuous uniform draws keep argmax stable under the probe step.
  auto x = detail::randn_var(rng, {2, 3, 6, 6});
  return gradcheck([&](Tape<double>* t) { return detail::sumsq(t, ops::maxpool2(t, x)); }, {x},
                   1e-6);
}

inline GradCheckReport check_bilinear(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  auto x = detail::randn_var(rng, {1, 2, 4, 4});
  return gradcheck([&](Tape<double>* t) { return detail::sumsq(t, ops::bilinear_up2(t, x)); },
                   {x});
}

inline GradCheckReport check_flip(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  GradCheckReport worst;
  worst.pass = true;
  for (FlipKind k :
       {FlipKind::Identity, FlipKind::Transpose, FlipKind::Rot180, FlipKind::MirrorW}) {
    auto x = detail::randn_var(rng, {1, 2, 5, 5});
    auto w = detail::randn_var(rng, {2, 2, 3, 3});
    GradCheckReport r = gradcheck(
        [&](Tape<double>* t) {
          // Flip composed with a convolution exercises the unflip in backward.
          auto y = ops::flip_apply(t, x, k);
          auto b = make_var(Tensor<double>::zeros({2}));
          return detail::sumsq(t, ops::mul_elementwise(t, ops::conv2d(t, y, w, b), y));
        },
        {x, w});
    worst.coords_checked += r.coords_checked;
    if (r.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = r.max_rel_err;
      worst.worst = r.worst;
    }
    worst.pass = worst.pass && r.pass;
  }
  return worst;
}

inline GradCheckReport check_threshold(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  GradCheckReport worst;
  worst.pass = true;
  for (auto variant : {ThresholdSpec::Variant::Hard, ThresholdSpec::Variant::Epsilon}) {
    ThresholdSpec spec;
    spec.variant = variant;
    auto x = detail::randn_var(rng, {2, 4, 5, 5});
    detail::clear_margin(x->value, spec.value, 1e-3);
    GradCheckReport r = gradcheck(
        [&](Tape<double>* t) { return detail::sumsq(t, threshold_conv(t, x, spec)); }, {x});
    worst.coords_checked += r.coords_checked;
    if (r.max_rel_err > worst.max_rel_err) {
      worst.max_rel_err = r.max_rel_err;
      worst.worst = r.worst;
    }
    worst.pass = worst.pass && r.pass;
  }
  return worst;
}

inline GradCheckReport check_em(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  cfg.part_kernels = {1, 3, 3, 3};
  ThresholdSpec th;
  EmParams<double> em = make_em(ps, "em", cfg, th, rng);
  detail::jitter_params(ps, rng);
  auto x = detail::randn_var(rng, {1, 4, 8, 8});
  detail::clear_margin(x->value, th.value, 1e-3);
  std::vector<Var<double>> inputs{x};
  for (const auto& e : ps.entries())
    if (e.trainable) inputs.push_back(e.var);
  return gradcheck(
      [&](Tape<double>* t) {
        EmOutput<double> o = em_forward(t, x, em, Mode::Train);
        return ops::add(t, detail::sumsq(t, o.skip), detail::sumsq(t, o.out));
      },
      inputs, 1e-5, 1e-4, 8);
}

inline GradCheckReport check_dm(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  cfg.part_kernels = {1, 3, 3, 3};
  DmParams<double> dm = make_dm(ps, "dm", cfg, rng);
  detail::jitter_params(ps, rng);
  auto x = detail::randn_var(rng, {1, 4, 4, 4});
  auto skip = detail::randn_var(rng, {1, 4, 8, 8});
  std::vector<Var<double>> inputs{x, skip};
  for (const auto& e : ps.entries())
    if (e.trainable) inputs.push_back(e.var);
  return gradcheck(
      [&](Tape<double>* t) { return detail::sumsq(t, dm_forward(t, x, skip, dm, Mode::Train)); },
      inputs, 1e-5, 1e-4, 8);
}

inline GradCheckReport check_model(uint64_t seed) {
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  DtNetConfig cfg;
  cfg.encoder_filters = {4, 4, 4, 4, 4};
  cfg.decoder_filters = {4, 4, 4, 4, 4};
  cfg.input_size = 32;
  DtNet<double> net = build_dtnet<double>(cfg, seed);
  detail::jitter_params(net.params, rng);
  auto x = detail::randn_var(rng, {1, 1, 32, 32}, 0.0, 1.0);
  Tensor<uint8_t> truth({1, 32, 32});
  std::uniform_int_distribution<int> lab(0, cfg.num_classes - 1);
  for (std::size_t i = 0; i < truth.numel(); ++i) truth[i] = static_cast<uint8_t>(lab(rng));
  std::vector<Var<double>> inputs{x};
  for (const auto& e : net.params.entries())
    if (e.trainable) inputs.push_back(e.var);
  return gradcheck(
      [&](Tape<double>* t) {
        return softmax_xent<double>(t, net.forward(t, x, Mode::Train), truth);
      },
      // The threshold mask is discontinuous; the smaller probe step keeps the
      // finite difference off mask flips.
      inputs, 1e-6, 5e-4, 3);
}

inline const std::vector<std::string>& scope_names() {
  static const std::vector<std::string> names{"conv",      "relu", "bn", "pool", "bilinear",
                                              "flip",      "threshold", "em", "dm", "model"};
  return names;
}

inline GradCheckReport run_scope(const std::string& scope, uint64_t seed) {
  static const std::map<std::string, GradCheckReport (*)(uint64_t)> table{
      {"conv", check_conv},         {"relu", check_relu}, {"bn", check_bn},
      {"pool", check_pool},         {"bilinear", check_bilinear},
      {"flip", check_flip},         {"threshold", check_threshold},
      {"em", check_em},             {"dm", check_dm},     {"model", check_model},
  };
  auto it = table.find(scope);
  if (it == table.end()) throw std::invalid_argument("unknown gradcheck scope: " + scope);
  return it->second(seed);
}

}  // namespace dtnet::checks
