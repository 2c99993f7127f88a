#pragma once

// Central-difference gradient checker. The loss builder is evaluated once
// against a tape for the analytic gradients, then twice per coordinate with
// perturbed inputs for the numerical ones. Runs in real-64.

#include <cmath>
#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtnet/autograd.hpp"

namespace dtnet {

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst;  // "input 2, coord 17"
  std::size_t coords_checked = 0;
};

/// `make_loss(tape)` must rebuild the scalar loss from the current values of
/// `inputs`; the checker mutates those values in place for the finite
/// differences. Coordinates whose absolute error is below `atol` are accepted
/// outright; the relative criterion is meaningless against FD roundoff when
/// the true gradient is orders of magnitude below the loss scale.
inline GradCheckReport gradcheck(
    const std::function<Var<double>(Tape<double>*)>& make_loss,
    const std::vector<Var<double>>& inputs, double eps = 1e-5, double tol = 1e-4,
    std::size_t max_coords_per_input = 0, double atol = 1e-6) {
  GradCheckReport rep;

  for (const auto& in : inputs) {
    in->requires_grad = true;
    in->zero_grad();
  }
  Tape<double> tape;
  Var<double> loss = make_loss(&tape);
  if (loss->value.numel() != 1)
    throw std::invalid_argument("gradcheck: loss must be scalar");
  if (!std::isfinite(loss->value[0]))
    throw std::domain_error("gradcheck: non-finite loss");
  tape.backward(loss);

  auto eval = [&]() {
    Var<double> l = make_loss(nullptr);
    if (!std::isfinite(l->value[0]))
      throw std::domain_error("gradcheck: non-finite loss during finite differences");
    return l->value[0];
  };

  for (std::size_t vi = 0; vi < inputs.size(); ++vi) {
    auto& in = *inputs[vi];
    const Tensor<double>& analytic = in.ensure_grad();
    // With a coordinate budget, probe an evenly strided subset.
    const std::size_t n = in.value.numel();
    const std::size_t stride =
        (max_coords_per_input > 0 && n > max_coords_per_input)
            ? (n + max_coords_per_input - 1) / max_coords_per_input
            : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = in.value[i];
      in.value[i] = saved + eps;
      const double fp = eval();
      in.value[i] = saved - eps;
      const double fm = eval();
      in.value[i] = saved;
      const double numeric = (fp - fm) / (2 * eps);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double rel = denom > 0 ? abs_err / denom : 0.0;
      ++rep.coords_checked;
      if (abs_err < atol) continue;  // near-zero fallback
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = "input " + std::to_string(vi) + ", coord " + std::to_string(i);
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace dtnet
