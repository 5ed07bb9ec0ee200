// SPDX-License-Identifier: Apache-2.0
#include "hialign/translation.hpp"

#include <algorithm>
#include <set>

#include "hialign/errors.hpp"

namespace hialign {

namespace {
const std::vector<std::string> kReserved = {"<bos>", "<eos>", "<pad>", "<unk>"};
}

TokenVocab::TokenVocab() : TokenVocab(kReserved) {}

TokenVocab::TokenVocab(const std::vector<std::string>& tokens) : tokens_(tokens) {
  if (tokens_.size() < kReserved.size() || !std::equal(kReserved.begin(), kReserved.end(), tokens_.begin())) {
    throw ConfigError("token vocabulary must start with <bos> <eos> <pad> <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!ids_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate token '" + tokens_[i] + "' in vocabulary");
    }
  }
}

TokenVocab TokenVocab::build(const std::vector<std::vector<std::string>>& sentences) {
  std::set<std::string> words;
  for (const auto& s : sentences)
    for (const auto& w : s)
      if (std::find(kReserved.begin(), kReserved.end(), w) == kReserved.end()) words.insert(w);
  std::vector<std::string> tokens = kReserved;
  tokens.insert(tokens.end(), words.begin(), words.end());
  return TokenVocab(tokens);
}

int TokenVocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& TokenVocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw ContractError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> TokenVocab::encode_words(std::span<const std::string> words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<int> TokenVocab::encode(std::span<const std::string> words) const {
  std::vector<int> ids{kBos};
  for (int i : encode_words(words)) ids.push_back(i);
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> TokenVocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    if (i == kEos) break;
    if (i == kBos || i == kPad) continue;
    out.push_back(token(i));
  }
  return out;
}

BlockSpec decoder_block_spec(const EncoderConfig& cfg) {
  BlockSpec s;
  s.dim = cfg.hidden;
  s.ffn = cfg.ffn;
  s.self_attn = ops::AttentionSpec{cfg.heads, ops::MaskKind::kCausal, 0, true, cfg.rope_base};
  s.cross_attn = true;
  s.lora = LoraSpec{cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout};
  s.dropout = cfg.dropout;
  return s;
}

void init_decoder(ParameterStore& store, const EncoderConfig& cfg, std::size_t vocab_size, Rng& rng) {
  // Word-level vocabulary is new to the decoder, so embeddings and the output
  // head train; the transformer body is a frozen base adapted through LoRA.
  Tensor embed({vocab_size, cfg.hidden});
  for (auto& v : embed.storage()) v = rng.normal();
  store.add("decoder.embed", std::move(embed));
  const auto spec = decoder_block_spec(cfg);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) init_block(store, "decoder." + std::to_string(i), spec, rng);
  init_layer_norm(store, "decoder.norm", cfg.hidden);
  init_linear(store, "decoder.head", cfg.hidden, vocab_size, rng);
}

Var decode_teacher_forced(Forward& f, const EncoderConfig& cfg, Var memory, std::span<const int> inputs) {
  if (inputs.empty()) throw ContractError("decode_teacher_forced: empty target sequence");
  if (inputs.front() != TokenVocab::kBos) throw ContractError("decode_teacher_forced: target must begin with <bos>");
  const auto spec = decoder_block_spec(cfg);
  Var x = ops::embedding(f.p("decoder.embed"), inputs);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) x = apply_block(f, "decoder." + std::to_string(i), spec, x, memory);
  return apply_linear(f, "decoder.head", apply_layer_norm(f, "decoder.norm", x));
}

Var slt_loss(Var logits, std::span<const int> targets) {
  return ops::cross_entropy_logits(logits, targets, TokenVocab::kPad);
}

TeacherForcing teacher_forcing(std::span<const int> sequence) {
  if (sequence.size() < 2) throw ContractError("teacher_forcing: sequence needs <bos> and at least one target");
  TeacherForcing tf;
  tf.inputs.assign(sequence.begin(), sequence.end() - 1);
  tf.targets.assign(sequence.begin() + 1, sequence.end());
  return tf;
}

std::vector<int> greedy_decode(ParameterStore& params, const EncoderConfig& cfg, const Tensor& memory,
                               std::size_t max_len) {
  if (max_len == 0) throw ContractError("greedy_decode: max_len must be at least 1");
  std::vector<int> prefix{TokenVocab::kBos};
  std::vector<int> out;
  for (std::size_t step = 0; step < max_len; ++step) {
    Tape tape;
    tape.set_grad_enabled(false);
    Forward f{tape, params, false, nullptr};
    const Tensor& logits = decode_teacher_forced(f, cfg, tape.constant(memory), prefix).value();
    const std::size_t last = logits.rows() - 1, v = logits.cols();
    std::size_t best = 0;
    for (std::size_t j = 1; j < v; ++j)
      if (logits.at(last, j) > logits.at(last, best)) best = j;
    const int token = static_cast<int>(best);
    out.push_back(token);
    if (token == TokenVocab::kEos) break;
    prefix.push_back(token);
  }
  return out;
}

}  // namespace hialign
