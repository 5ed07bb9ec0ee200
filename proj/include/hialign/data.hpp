// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hialign/pseudo_gloss.hpp"
#include "hialign/tensor.hpp"
#include "hialign/translation.hpp"

namespace hialign {

// Generator for a synthetic signing corpus: every gloss owns a fixed motion
// template, a video is the concatenation of its glosses' templates plus noise
// and optional non-sign segments, and the sentence spells the glosses out with
// function words in between.
struct SyntheticCorpusConfig {
  std::size_t glosses = 50;
  std::vector<std::string> function_words = {"der", "die", "das", "und", "im", "am"};
  std::size_t frames_min = 2;
  std::size_t frames_max = 4;
  std::size_t input_dim = 64;
  double noise = 0.5;
  double pad_prob = 0.2;
  std::size_t pad_min = 1;
  std::size_t pad_max = 3;
  std::size_t glosses_min = 3;
  std::size_t glosses_max = 8;
  std::size_t train = 500;
  std::size_t dev = 60;
  std::size_t test = 60;
  std::size_t embedding_dim = 300;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Sample {
  Tensor frames;  // [T*, input_dim]
  std::vector<std::string> sentence;
  // Generator ground truth; empty for loaded corpora.
  std::vector<std::size_t> glosses;
};

struct Corpus {
  std::vector<Sample> train, dev, test;
  PosLexicon lexicon;
  EmbeddingTable embeddings;

  const std::vector<Sample>& split(std::string_view name) const;
};

// Lemma and surface form of synthetic gloss k.
std::string gloss_lemma(std::size_t k);
std::string gloss_surface(std::size_t k);

Corpus generate_corpus(const SyntheticCorpusConfig& cfg);

// Writes manifest.json, sentences.txt, features/*.hfat, lexicon.tsv and embeddings.txt.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
// Accepts the corpus directory or the manifest path inside it.
Corpus load_corpus(const std::filesystem::path& path);

// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

struct Batch {
  std::vector<std::size_t> indices;  // positions in the source split
  Tensor frames;                     // [B, T_max, input_dim], zero padded
  std::vector<std::size_t> frame_lengths;
  std::vector<std::vector<bool>> frame_mask;
  std::vector<std::vector<int>> tokens;  // <bos> .. <eos> then <pad>
  std::vector<std::vector<bool>> token_mask;

  std::size_t size() const { return indices.size(); }
  // Unpadded frames of batch entry b.
  Tensor sample_frames(std::size_t b) const;
  // Unpadded token ids of batch entry b.
  std::vector<int> sample_tokens(std::size_t b) const;
};

// Deterministic for a given seed; shuffle=false keeps corpus order.
std::vector<Batch> make_batches(const std::vector<Sample>& samples, const TokenVocab& vocab, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle);

}  // namespace hialign
