// SPDX-License-Identifier: Apache-2.0
#include "hialign/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hialign/errors.hpp"
#include "hialign/rng.hpp"

namespace hialign {

using Json = nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EncoderConfig, input_dim, frame_dim, hidden, heads, ffn, temporal_layers,
                                                window, downsample_after_layer, downsample_factor, rope_base,
                                                llm_layers, decoder_layers, text_layers, proto_dim, lora_rank,
                                                lora_alpha, lora_dropout, dropout, max_decode_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, lr, weight_decay, clip_norm, warmup_epochs,
                                                pretrain_epochs, stage1_epochs, stage2_epochs, batch_size, lambda,
                                                seed, augment_noise, deterministic)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticCorpusConfig, glosses, function_words, frames_min, frames_max,
                                                input_dim, noise, pad_prob, pad_min, pad_max, glosses_min,
                                                glosses_max, train, dev, test, embedding_dim, seed)

namespace {

Json to_ordered(const Config& c) {
  Json j;
  j["encoder"] = c.encoder;
  j["train"] = c.train;
  j["corpus"] = c.corpus;
  return j;
}

void reject_unknown(const nlohmann::json& given, const Json& known, const std::string& where) {
  if (!given.is_object()) throw ConfigError("config: " + (where.empty() ? "top level" : where) + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!known.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (where.empty()) reject_unknown(value, known[key], path);
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(clip_norm > 0.0)) fail("clip_norm must be positive");
  if (pretrain_epochs == 0 || stage1_epochs + stage2_epochs == 0) fail("epoch counts must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(lambda >= 0.0)) fail("lambda must be non-negative");
  if (!(augment_noise >= 0.0)) fail("augment_noise must be non-negative");
}

void Config::validate() const {
  encoder.validate();
  train.validate();
  corpus.validate();
  if (corpus.input_dim != encoder.input_dim) {
    throw ConfigError("config: corpus.input_dim " + std::to_string(corpus.input_dim) + " != encoder.input_dim " +
                      std::to_string(encoder.input_dim));
  }
}

std::string Config::to_json() const { return to_ordered(*this).dump(2); }

Config config_from_json(const std::string& text) {
  nlohmann::json given;
  try {
    given = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  reject_unknown(given, to_ordered(Config{}), "");
  Config c;
  try {
    if (given.contains("encoder")) c.encoder = given["encoder"].get<EncoderConfig>();
    if (given.contains("train")) c.train = given["train"].get<TrainConfig>();
    if (given.contains("corpus")) c.corpus = given["corpus"].get<SyntheticCorpusConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::uint64_t architecture_hash(const EncoderConfig& cfg) { return stable_hash(Json(cfg).dump()); }

}  // namespace hialign
