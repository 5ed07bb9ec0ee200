// SPDX-License-Identifier: Apache-2.0
#include "hialign/optim.hpp"

#include <cmath>
#include <numbers>

#include "hialign/errors.hpp"

namespace hialign {

void adamw_step(ParameterStore& params, const Gradients& grads, AdamState& state, double lr,
                const AdamWOptions& opt) {
  for (const auto& [name, g] : grads) {
    if (params.contains(name) && params.get(name).receives_grad() && !g.all_finite()) {
      throw NumericError("adamw: non-finite gradient for '" + name + "'; step aborted");
    }
  }
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) continue;
    auto& p = params.get(name);
    if (!p.receives_grad()) continue;
    if (g.shape() != p.value.shape()) {
      throw DimensionError("adamw: gradient " + shape_str(g.shape()) + " for '" + name + "' of shape " +
                           shape_str(p.value.shape()));
    }
    auto [mit, m_new] = state.m.try_emplace(name, Tensor::zeros_like(p.value));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor::zeros_like(p.value));
    const std::uint64_t t = ++state.steps[name];
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    auto w = p.value.data();
    auto m = mit->second.data();
    auto v = vit->second.data();
    const auto gd = g.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gd[i];
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gd[i] * gd[i];
      w[i] -= lr * opt.weight_decay * w[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.eps);
    }
  }
}

double one_cycle_cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak_lr) {
  if (step > total_steps) throw ContractError("lr schedule: step beyond total_steps");
  if (warmup_steps >= total_steps) throw ContractError("lr schedule: warmup must be shorter than the run");
  if (step < warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(Gradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g.data()) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [name, g] : grads)
      for (auto& x : g.data()) x *= s;
  }
  return norm;
}

}  // namespace hialign
