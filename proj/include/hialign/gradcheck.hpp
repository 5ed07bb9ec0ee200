// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hialign/autodiff.hpp"

namespace hialign {

struct GradcheckEntry {
  std::string name;
  // max_i |analytic_i - numeric_i| / max(|analytic|_inf, |numeric|_inf, 1e-6)
  double max_rel_err = 0.0;
  bool finite = true;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed = true;
};

// Builds a scalar loss on the given tape from parameters bound out of `params`.
// Must be deterministic.
using LossFn = std::function<Var(Tape&, ParameterStore&)>;

// Compares reverse-mode gradients with central differences for every
// parameter that receives gradients.
GradcheckReport gradcheck(const LossFn& f, ParameterStore& params, double epsilon = 1e-4, double tolerance = 1e-4);

}  // namespace hialign
