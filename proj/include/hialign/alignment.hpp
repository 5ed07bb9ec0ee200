// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hialign/autodiff.hpp"
#include "hialign/encoders.hpp"
#include "hialign/pseudo_gloss.hpp"

// Pre-training objectives: pseudo-gloss localization with a binary
// cross-entropy presence loss, and symmetric contrastive video/sentence
// alignment.
namespace hialign {

struct AlignmentTemperatures {
  static constexpr double kTimeInit = 0.1;
  static constexpr double kPrototypeInit = 0.1;
  static constexpr double kContrastiveInit = 0.07;
  static constexpr double kMin = 1e-3;
  static constexpr double kMax = 100.0;

  static constexpr const char* kTime = "align.tau_t";
  static constexpr const char* kPrototype = "align.tau_u";
  static constexpr const char* kContrastive = "align.tau_c";
};

// `align.proj` (hidden -> proto_dim) and the three learnable temperatures.
void init_alignment_heads(ParameterStore& store, const EncoderConfig& cfg, Rng& rng);
// Keeps every temperature inside [kMin, kMax]; run after each optimizer step.
void clamp_temperatures(ParameterStore& store);

// Z[T, D] -> Z'[T, D'].
Var project_segments(Forward& f, Var segments);

// Cosine similarities S[T, U + 1] against the frozen prototype bank.
Var similarity_scores(Var projected, const PrototypeMatrix& prototypes);

struct Localization {
  Var time_softmax;       // softmax over time of S / tau_T, per prototype column
  Var prototype_softmax;  // softmax over prototypes of S / tau_U, per time step
  Var scores;             // E_hat[U + 1] = sum_t time_softmax * prototype_softmax
};

Localization localize(Var similarity, Var tau_time, Var tau_prototype);

// Mean BCE between the gloss entries E_hat[1..U] and H; the non-sign entry is excluded.
Var psp_loss(Var scores, const Tensor& labels);

// Symmetric InfoNCE over cosine similarities of pooled video rows Mt[B, D] and
// sentence rows Lt[B, D], scaled by 1 / tau_c and averaged over both directions.
Var align_loss(Var video, Var text, Var tau_contrastive);

// l_align + lambda * l_psp
Var pretrain_loss(Var l_align, Var l_psp, double lambda);

}  // namespace hialign
