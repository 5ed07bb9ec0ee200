// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hialign/autodiff.hpp"

namespace hialign {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// First and second moments plus a per-parameter step count, so parameters
// that start training mid-run get their own bias correction.
struct AdamState {
  std::map<std::string, Tensor> m, v;
  std::map<std::string, std::uint64_t> steps;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// Decoupled weight decay followed by the bias-corrected Adam update, applied to
// every parameter that receives gradients. Throws NumericError, leaving all
// parameters and moments untouched, if any gradient is non-finite.
void adamw_step(ParameterStore& params, const Gradients& grads, AdamState& state, double lr,
                const AdamWOptions& opt);

// Linear 0 -> peak over the warmup, then cosine peak -> 0 at total_steps.
double one_cycle_cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double peak_lr);

// Rescales all gradients by max_norm / g when the global L2 norm g exceeds
// max_norm. Returns g.
double clip_grad_norm(Gradients& grads, double max_norm);

}  // namespace hialign
