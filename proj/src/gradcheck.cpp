// SPDX-License-Identifier: Apache-2.0
#include "hialign/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace hialign {

namespace {

double evaluate(const LossFn& f, ParameterStore& params) {
  Tape tape;
  tape.set_grad_enabled(false);
  return f(tape, params).value().item();
}

}  // namespace

GradcheckReport gradcheck(const LossFn& f, ParameterStore& params, double epsilon, double tolerance) {
  GradcheckReport report;
  Tape tape;
  Var loss = f(tape, params);
  tape.backward(loss);
  const Gradients grads = tape.param_grads(params);

  for (const auto& name : params.names()) {
    auto& p = params.get(name);
    if (!p.receives_grad()) continue;
    GradcheckEntry entry{name};
    auto it = grads.find(name);
    const Tensor analytic = it != grads.end() ? it->second : Tensor::zeros_like(p.value);
    Tensor numeric = Tensor::zeros_like(p.value);
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + epsilon;
      const double up = evaluate(f, params);
      p.value[i] = orig - epsilon;
      const double down = evaluate(f, params);
      p.value[i] = orig;
      numeric[i] = (up - down) / (2.0 * epsilon);
      if (!std::isfinite(numeric[i]) || !std::isfinite(analytic[i])) entry.finite = false;
    }
    const double scale = std::max({analytic.max_abs(), numeric.max_abs(), 1e-6});
    entry.max_rel_err = entry.finite ? max_abs_diff(analytic, numeric) / scale : INFINITY;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    if (!entry.finite || entry.max_rel_err > tolerance) report.passed = false;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace hialign
