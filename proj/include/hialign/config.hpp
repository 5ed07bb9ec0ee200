// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "hialign/data.hpp"
#include "hialign/encoders.hpp"

namespace hialign {

struct TrainConfig {
  double lr = 3e-4;
  double weight_decay = 1e-3;
  double clip_norm = 1.0;
  std::size_t warmup_epochs = 5;
  std::size_t pretrain_epochs = 40;
  std::size_t stage1_epochs = 20;
  std::size_t stage2_epochs = 40;
  std::size_t batch_size = 8;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  // Std of Gaussian jitter added to raw training frames; 0 disables it.
  double augment_noise = 0.0;
  // Kernels are bit-reproducible regardless; kept so configs state it explicitly.
  bool deterministic = true;

  void validate() const;
};

// JSON sections "encoder", "train" and "corpus"; omitted keys keep their defaults.
struct Config {
  EncoderConfig encoder;
  TrainConfig train;
  SyntheticCorpusConfig corpus;

  void validate() const;
  std::string to_json() const;
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
Config config_from_json(const std::string& text);
// IoError if the file cannot be read.
Config load_config(const std::filesystem::path& path);

// Stable hash of the encoder section: checkpoints built from different
// architectures hash differently.
std::uint64_t architecture_hash(const EncoderConfig& cfg);

}  // namespace hialign
