#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "dtnet/checks.hpp"
#include "dtnet/mdic.hpp"

using namespace dtnet;

namespace {
Var<double> vec_var(std::vector<double> v) {
  const int n = static_cast<int>(v.size());
  return make_var(Tensor<double>({1, 1, 1, n}, std::move(v)));
}
}  // namespace

TEST_CASE("threshold convolution hard variant example") {
  ThresholdSpec spec;
  spec.variant = ThresholdSpec::Variant::Hard;
  auto x = vec_var({-1.0, 0.05, 0.5});
  auto y = threshold_conv<double>(nullptr, x, spec);
  CHECK(y->value[0] == 0.0);
  CHECK(y->value[1] == 0.0);
  CHECK(y->value[2] == 0.5);
}

TEST_CASE("threshold convolution epsilon variant example") {
  ThresholdSpec spec;  // epsilon variant by default
  auto x = vec_var({-1.0, 0.05, 0.5});
  auto y = threshold_conv<double>(nullptr, x, spec);
  CHECK(y->value[0] == 1e-10);
  CHECK(y->value[1] == 1e-10);
  CHECK(y->value[2] == 0.5);
}

TEST_CASE("threshold at T=0 equals relu for the hard variant") {
  ThresholdSpec spec;
  spec.value = 0.0;
  spec.variant = ThresholdSpec::Variant::Hard;
  std::mt19937 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = make_var(Tensor<double>::uniform({1, 2, 4, 4}, -1., 1., rng));
    auto y = threshold_conv<double>(nullptr, x, spec);
    Tensor<double> r = kernels::relu_forward(x->value);
    for (std::size_t i = 0; i < r.numel(); ++i) CHECK(y->value[i] == r[i]);
  }
}

TEST_CASE("threshold properties over random tensors") {
  // Selectivity, monotone survivor count in T, and the epsilon floor,
  // property-tested over 1000 random tensors.
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> tdist(0.0, 0.8);
  int tensors = 0;
  for (int trial = 0; trial < 1000; ++trial, ++tensors) {
    auto x = make_var(Tensor<double>::uniform({1, 1, 4, 4}, -1., 1., rng));
    ThresholdSpec lo, hi;
    lo.value = tdist(rng);
    hi.value = lo.value + tdist(rng);

    ThresholdSpec hard = lo;
    hard.variant = ThresholdSpec::Variant::Hard;
    auto yh = threshold_conv<double>(nullptr, x, hard);
    for (std::size_t i = 0; i < yh->value.numel(); ++i) {
      const bool survives = std::max(x->value[i], 0.0) > lo.value;
      CHECK(yh->value[i] == (survives ? x->value[i] : 0.0));
    }

    auto count_nonzero = [](const Var<double>& v) {
      int n = 0;
      for (std::size_t i = 0; i < v->value.numel(); ++i)
        if (v->value[i] != 0.0) ++n;
      return n;
    };
    ThresholdSpec hard_hi = hi;
    hard_hi.variant = ThresholdSpec::Variant::Hard;
    CHECK(count_nonzero(threshold_conv<double>(nullptr, x, hard_hi)) <= count_nonzero(yh));

    auto ye = threshold_conv<double>(nullptr, x, lo);  // epsilon variant
    for (std::size_t i = 0; i < ye->value.numel(); ++i) CHECK(ye->value[i] != 0.0);
  }
  CHECK(tensors == 1000);
}

TEST_CASE("threshold mask is constant in backward") {
  ThresholdSpec spec;
  auto x = make_var(Tensor<double>({1, 1, 1, 3}, std::vector<double>{-1.0, 0.05, 0.5}), true);
  Tape<double> tape;
  auto y = threshold_conv(&tape, x, spec);
  auto loss = ops::sum_all(&tape, y);
  tape.backward(loss);
  CHECK(x->grad[0] == 0.0);
  CHECK(x->grad[1] == 0.0);
  CHECK(x->grad[2] == 1.0);
}

TEST_CASE("threshold spec validation") {
  ThresholdSpec bad;
  bad.value = -0.1;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad.value = 0.1;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("encoder module shapes") {
  std::mt19937 rng(1);
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 8;
  cfg.part_kernels = {1, 3, 3, 3};
  EmParams<double> em = make_em(ps, "em", cfg, ThresholdSpec{}, rng);
  auto x = make_var(Tensor<double>::uniform({2, 4, 8, 8}, -1., 1., rng));
  EmOutput<double> out = em_forward<double>(nullptr, x, em, Mode::Train);
  CHECK(out.skip->value.shape() == std::vector<int>{2, 8, 8, 8});
  CHECK(out.out->value.shape() == std::vector<int>{2, 8, 4, 4});
}

TEST_CASE("encoder module with channels not divisible by four feeds parts the full input") {
  std::mt19937 rng(1);
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 8;
  EmParams<double> em = make_em(ps, "em", cfg, ThresholdSpec{}, rng);
  CHECK(!em.split_input);
  auto x = make_var(Tensor<double>::uniform({1, 1, 8, 8}, -1., 1., rng));
  EmOutput<double> out = em_forward<double>(nullptr, x, em, Mode::Train);
  CHECK(out.out->value.shape() == std::vector<int>{1, 8, 4, 4});
}

TEST_CASE("encoder module input validation") {
  std::mt19937 rng(1);
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  EmParams<double> em = make_em(ps, "em", cfg, ThresholdSpec{}, rng);
  auto wrong_c = make_var(Tensor<double>({1, 6, 8, 8}));
  CHECK_THROWS_AS(em_forward<double>(nullptr, wrong_c, em, Mode::Train), std::invalid_argument);
  auto not_square = make_var(Tensor<double>({1, 4, 8, 6}));
  CHECK_THROWS_AS(em_forward<double>(nullptr, not_square, em, Mode::Train),
                  std::invalid_argument);
  auto odd = make_var(Tensor<double>({1, 4, 7, 7}));
  CHECK_THROWS_AS(em_forward<double>(nullptr, odd, em, Mode::Train), std::invalid_argument);
}

TEST_CASE("decoder module shapes and skip validation") {
  std::mt19937 rng(1);
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 8;
  cfg.out_channels = 4;
  cfg.part_kernels = {1, 3, 3, 3};
  DmParams<double> dm = make_dm(ps, "dm", cfg, rng);
  auto x = make_var(Tensor<double>::uniform({2, 8, 4, 4}, -1., 1., rng));
  auto skip = make_var(Tensor<double>::uniform({2, 4, 8, 8}, -1., 1., rng));
  auto y = dm_forward<double>(nullptr, x, skip, dm, Mode::Train);
  CHECK(y->value.shape() == std::vector<int>{2, 4, 8, 8});

  auto bad_skip = make_var(Tensor<double>({2, 4, 4, 4}));
  CHECK_THROWS_AS(dm_forward<double>(nullptr, x, bad_skip, dm, Mode::Train),
                  std::invalid_argument);
}

TEST_CASE("decoder zero weights reduce the output to fused bias statistics") {
  // With every parameter zeroed except the fusion BN (gamma 1, beta 0) the
  // module output is the normalization of a constant map: exactly zero.
  std::mt19937 rng(1);
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  DmParams<double> dm = make_dm(ps, "dm", cfg, rng);
  for (const auto& e : ps.entries())
    if (e.trainable && e.name.find("gamma") == std::string::npos)
      std::fill(e.var->value.vec().begin(), e.var->value.vec().end(), 0.0);
  auto x = make_var(Tensor<double>::uniform({1, 4, 4, 4}, -1., 1., rng));
  auto skip = make_var(Tensor<double>::zeros({1, 4, 8, 8}));
  auto y = dm_forward<double>(nullptr, x, skip, dm, Mode::Train);
  for (std::size_t i = 0; i < y->value.numel(); ++i) CHECK(y->value[i] == doctest::Approx(0.0));
}

TEST_CASE("saturated threshold blocks the encoder integration path") {
  // With T far above every activation, the epsilon variant passes only the
  // floor constant, so the threshold output is constant.
  std::mt19937 rng(4);
  ParamStore<double> ps;
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 4;
  ThresholdSpec th;
  th.value = 1e6;
  EmParams<double> em = make_em(ps, "em", cfg, th, rng);
  auto x = make_var(Tensor<double>::uniform({1, 4, 8, 8}, -1., 1., rng), true);
  Tape<double> tape;
  EmOutput<double> out = em_forward(&tape, x, em, Mode::Train);
  auto loss = ops::sum_all(&tape, out.skip);
  tape.backward(loss);
  // Gradient cannot cross the all-masked threshold.
  bool all_zero = true;
  if (x->grad_ready)
    for (std::size_t i = 0; i < x->grad.numel(); ++i) all_zero = all_zero && x->grad[i] == 0.0;
  CHECK(all_zero);
}

TEST_CASE("module gradchecks on micro instances") {
  GradCheckReport em = checks::check_em(1);
  INFO("em worst ", em.worst, " err ", em.max_rel_err);
  CHECK(em.pass);
  CHECK(em.max_rel_err < 1e-4);
  GradCheckReport dm = checks::check_dm(1);
  INFO("dm worst ", dm.worst, " err ", dm.max_rel_err);
  CHECK(dm.pass);
  CHECK(dm.max_rel_err < 1e-4);
}

TEST_CASE("mdic config validation") {
  MdicConfig cfg;
  cfg.in_channels = 4;
  cfg.out_channels = 6;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.out_channels = 8;
  cfg.part_kernels = {2, 3, 5, 7};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}
