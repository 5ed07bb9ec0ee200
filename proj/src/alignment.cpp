// SPDX-License-Identifier: Apache-2.0
#include "hialign/alignment.hpp"

#include <algorithm>
#include <numeric>

#include "hialign/errors.hpp"

namespace hialign {

void init_alignment_heads(ParameterStore& store, const EncoderConfig& cfg, Rng& rng) {
  init_linear(store, "align.proj", cfg.hidden, cfg.proto_dim, rng);
  store.add(AlignmentTemperatures::kTime, Tensor::scalar(AlignmentTemperatures::kTimeInit));
  store.add(AlignmentTemperatures::kPrototype, Tensor::scalar(AlignmentTemperatures::kPrototypeInit));
  store.add(AlignmentTemperatures::kContrastive, Tensor::scalar(AlignmentTemperatures::kContrastiveInit));
}

void clamp_temperatures(ParameterStore& store) {
  for (const char* name :
       {AlignmentTemperatures::kTime, AlignmentTemperatures::kPrototype, AlignmentTemperatures::kContrastive}) {
    if (!store.contains(name)) continue;
    auto& v = store.value(name)[0];
    v = std::clamp(v, AlignmentTemperatures::kMin, AlignmentTemperatures::kMax);
  }
}

Var project_segments(Forward& f, Var segments) { return apply_linear(f, "align.proj", segments); }

Var similarity_scores(Var projected, const PrototypeMatrix& prototypes) {
  if (projected.value().cols() != prototypes.dim()) {
    throw DimensionError("similarity_scores: projected width " + std::to_string(projected.value().cols()) +
                         " vs prototype dimension " + std::to_string(prototypes.dim()));
  }
  return ops::cosine_sim_matrix(projected, projected.tape->constant(prototypes.columns));
}

Localization localize(Var similarity, Var tau_time, Var tau_prototype) {
  Localization l;
  l.time_softmax = ops::softmax_temp(similarity, 0, tau_time);
  l.prototype_softmax = ops::softmax_temp(similarity, 1, tau_prototype);
  l.scores = ops::sum_axis(ops::mul(l.time_softmax, l.prototype_softmax), 0);
  return l;
}

Var psp_loss(Var scores, const Tensor& labels) {
  const std::size_t n = scores.value().numel();
  if (n < 2 || labels.numel() != n - 1) {
    throw DimensionError("psp_loss: " + std::to_string(n) + " scores for " + std::to_string(labels.numel()) +
                         " gloss labels");
  }
  return ops::bce_mean(ops::slice_rows(scores, 1, n), labels);
}

Var align_loss(Var video, Var text, Var tau_contrastive) {
  const auto& mv = video.value();
  if (mv.rank() != 2 || mv.rows() == 0) throw DomainError("align_loss: empty batch");
  if (text.value().shape() != mv.shape()) {
    throw DimensionError("align_loss: video " + shape_str(mv.shape()) + " vs text " + shape_str(text.value().shape()));
  }
  std::vector<int> diagonal(mv.rows());
  std::iota(diagonal.begin(), diagonal.end(), 0);
  Var logits = ops::div_scalar(ops::cosine_sim_matrix(video, ops::transpose(text)), tau_contrastive);
  Var video_to_text = ops::cross_entropy_logits(logits, diagonal);
  Var text_to_video = ops::cross_entropy_logits(ops::transpose(logits), diagonal);
  return ops::scale(ops::add(video_to_text, text_to_video), 0.5);
}

Var pretrain_loss(Var l_align, Var l_psp, double lambda) {
  if (!(lambda >= 0.0)) throw DomainError("pretrain_loss: lambda must be non-negative");
  return ops::add(l_align, ops::scale(l_psp, lambda));
}

}  // namespace hialign
