// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "hialign/checkpoint.hpp"
#include "hialign/data.hpp"
#include "hialign/metrics.hpp"

// Pre-training, two-stage fine-tuning, evaluation and end-to-end gradient checks.
namespace hialign {

struct TrainOptions {
  // Receives one JSON object per line.
  std::ostream* log = nullptr;
  // Called after every epoch's optimizer steps; phase is "pretrain", "stage1" or "stage2".
  std::function<void(const std::string& phase, std::size_t epoch, const ParameterStore&)> on_epoch;
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  std::vector<std::string> log;
};

// Selects the epoch with the lowest dev L_pretrain (train loss when dev is empty).
TrainResult pretrain(const Config& cfg, const Corpus& corpus, const TrainOptions& opt = {});

// `init == nullptr` trains from random initialization. Selects the epoch with
// the highest dev BLEU-4, breaking ties by lower dev L_SLT.
TrainResult finetune(const Config& cfg, const Corpus& corpus, const Checkpoint* init, const TrainOptions& opt = {});

// Greedy decoding of one video with a fine-tuned checkpoint.
std::vector<std::string> translate(const Checkpoint& ckpt, const Tensor& frames);

// Decodes every sample and scores the results against the reference sentences.
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<Sample>& samples, std::vector<Tokens>* hypotheses = nullptr);

// Mean teacher-forced L_SLT over `samples` in eval mode.
double teacher_forced_loss(const Checkpoint& ckpt, const std::vector<Sample>& samples);

struct GradcheckResult {
  std::vector<std::pair<std::string, double>> losses;  // loss name -> max relative error
  bool passed = true;
};

// Forces tiny dimensions and checks L_psp, L_align, L_pretrain for
// lambda in {0, 0.5, 1} and L_SLT against central differences.
GradcheckResult run_gradcheck(const Config& cfg, double tolerance = 1e-4);

}  // namespace hialign
