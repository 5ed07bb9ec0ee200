// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hialign/encoders.hpp"

// Autoregressive sentence generation from video-level features.
namespace hialign {

// Word-level vocabulary with reserved ids 0..3.
class TokenVocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;

  TokenVocab();
  // Reserved tokens followed by the sorted distinct words of `sentences`.
  static TokenVocab build(const std::vector<std::vector<std::string>>& sentences);
  explicit TokenVocab(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // <bos> w1 .. wn <eos>
  std::vector<int> encode(std::span<const std::string> words) const;
  // Plain word ids, unknown words mapped to <unk>.
  std::vector<int> encode_words(std::span<const std::string> words) const;
  // Drops reserved ids and stops at the first <eos>.
  std::vector<std::string> decode(std::span<const int> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

BlockSpec decoder_block_spec(const EncoderConfig& cfg);
void init_decoder(ParameterStore& store, const EncoderConfig& cfg, std::size_t vocab_size, Rng& rng);

// inputs = <bos> w1 .. w_{n}; row j of the result scores the token after inputs[0..j].
Var decode_teacher_forced(Forward& f, const EncoderConfig& cfg, Var memory, std::span<const int> inputs);

// Cross-entropy with <pad> positions ignored.
Var slt_loss(Var logits, std::span<const int> targets);

// Splits <bos> w1 .. wn <eos> into decoder inputs (drop last) and targets (drop first).
struct TeacherForcing {
  std::vector<int> inputs;
  std::vector<int> targets;
};
TeacherForcing teacher_forcing(std::span<const int> sequence);

// Argmax decoding from <bos> until <eos> or max_len tokens; ties go to the lowest id.
// The result excludes <bos> and includes <eos> when it was produced.
std::vector<int> greedy_decode(ParameterStore& params, const EncoderConfig& cfg, const Tensor& memory,
                               std::size_t max_len);

}  // namespace hialign
