// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hialign/tensor.hpp"

// Pseudo-gloss extraction: content words of the target sentence, lemmatized,
// become weak gloss-like labels, each tied to a fixed prototype embedding.
namespace hialign {

enum class PosTag { kNoun, kNum, kAdv, kPron, kPropn, kAdj, kVerb, kOther };

std::string tag_name(PosTag tag);
// Unknown names map to kOther.
PosTag parse_tag(const std::string& name);
// NOUN, NUM, ADV, PRON, PROPN, ADJ and VERB are kept as pseudo-glosses.
bool is_content_tag(PosTag tag);

struct LexEntry {
  std::string lemma;
  PosTag tag = PosTag::kOther;
};

// Lowercase token -> (lemma, tag). Lookup is total: unknown tokens tag as OTHER
// with themselves as lemma.
class PosLexicon {
 public:
  void add(const std::string& token, const std::string& lemma, PosTag tag);
  LexEntry lookup(const std::string& token) const;
  std::size_t size() const { return entries_.size(); }

  // `token<TAB>lemma<TAB>TAG` per line.
  static PosLexicon load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, LexEntry> entries_;
};

// Lemmas of content tokens in first-occurrence order, without duplicates.
std::vector<std::string> extract_pseudo_glosses(std::span<const std::string> tokens, const PosLexicon& lexicon);

// Sorted unique pseudo-gloss lemmas; index = position in the sorted list.
class PseudoGlossVocab {
 public:
  PseudoGlossVocab() = default;
  explicit PseudoGlossVocab(std::vector<std::string> sorted_lemmas);

  // Union of pseudo-glosses over the (training) sentences.
  static PseudoGlossVocab build(const std::vector<std::vector<std::string>>& sentences, const PosLexicon& lexicon);

  std::size_t size() const { return lemmas_.size(); }
  const std::string& lemma(std::size_t i) const { return lemmas_.at(i); }
  const std::vector<std::string>& lemmas() const { return lemmas_; }
  std::optional<std::size_t> index(const std::string& lemma) const;

  // One lemma per line; line number - 1 is the index.
  static PseudoGlossVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> lemmas_;
  std::unordered_map<std::string, std::size_t> index_;
};

// lemma -> dense vector, read from `<count> <dim>` header + `lemma v1 .. v_dim` lines.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}
  void add(const std::string& lemma, std::vector<double> v);
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return rows_.size(); }
  const std::vector<double>* find(const std::string& lemma) const;

  static EmbeddingTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::size_t dim_;
  std::map<std::string, std::vector<double>> rows_;
};

// Frozen prototype bank P[D', U + 1]. Column 0 is the all-zero non-sign
// prototype; column u + 1 is the unit-normalized embedding of gloss u.
struct PrototypeMatrix {
  Tensor columns;

  std::size_t dim() const { return columns.rows(); }
  std::size_t glosses() const { return columns.cols() - 1; }
};

// Lemmas missing from the table receive a unit vector drawn from a stream
// seeded by the lemma's stable hash.
PrototypeMatrix build_prototypes(const PseudoGlossVocab& vocab, const EmbeddingTable& table, std::size_t dim);

// Multi-hot presence vector H over the vocabulary (non-sign column excluded).
Tensor labels_for(std::span<const std::string> tokens, const PosLexicon& lexicon, const PseudoGlossVocab& vocab);

}  // namespace hialign
