// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "hialign/config.hpp"
#include "hialign/optim.hpp"
#include "hialign/pseudo_gloss.hpp"
#include "hialign/translation.hpp"

namespace hialign {

// Layout: "HFCK" | u32 format version | u64 header length | JSON header |
// one HFAT (f64) record per parameter, then per optimizer entry m and v.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string phase;  // "pretrain" or "finetune"
  Config config;
  ParameterStore params;
  AdamState optimizer;
  std::size_t epoch = 0;
  // Dev L_pretrain for pre-training, dev BLEU-4 for fine-tuning.
  double best_value = 0.0;
  std::uint64_t config_hash = 0;
  TokenVocab tokens;
  PseudoGlossVocab glosses;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hialign
