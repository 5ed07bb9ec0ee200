// SPDX-License-Identifier: Apache-2.0
#include "hialign/pseudo_gloss.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "hialign/errors.hpp"
#include "hialign/rng.hpp"

namespace hialign {

namespace {

constexpr std::pair<PosTag, const char*> kTagNames[] = {
    {PosTag::kNoun, "NOUN"}, {PosTag::kNum, "NUM"},     {PosTag::kAdv, "ADV"},  {PosTag::kPron, "PRON"},
    {PosTag::kPropn, "PROPN"}, {PosTag::kAdj, "ADJ"}, {PosTag::kVerb, "VERB"}, {PosTag::kOther, "OTHER"},
};

std::ifstream open_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  return is;
}

std::ofstream create_text(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace

std::string tag_name(PosTag tag) {
  for (const auto& [t, name] : kTagNames)
    if (t == tag) return name;
  return "OTHER";
}

PosTag parse_tag(const std::string& name) {
  for (const auto& [t, n] : kTagNames)
    if (name == n) return t;
  return PosTag::kOther;
}

bool is_content_tag(PosTag tag) { return tag != PosTag::kOther; }

void PosLexicon::add(const std::string& token, const std::string& lemma, PosTag tag) {
  entries_[token] = LexEntry{lemma, tag};
}

LexEntry PosLexicon::lookup(const std::string& token) const {
  auto it = entries_.find(token);
  if (it == entries_.end()) return LexEntry{token, PosTag::kOther};
  return it->second;
}

PosLexicon PosLexicon::load(const std::filesystem::path& path) {
  auto is = open_text(path);
  PosLexicon lex;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token, lemma, tag;
    if (!std::getline(ls, token, '\t') || !std::getline(ls, lemma, '\t') || !std::getline(ls, tag)) {
      throw LoadError(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>lemma<TAB>TAG");
    }
    lex.add(token, lemma, parse_tag(tag));
  }
  return lex;
}

void PosLexicon::save(const std::filesystem::path& path) const {
  auto os = create_text(path);
  for (const auto& [token, e] : entries_) os << token << '\t' << e.lemma << '\t' << tag_name(e.tag) << '\n';
}

std::vector<std::string> extract_pseudo_glosses(std::span<const std::string> tokens, const PosLexicon& lexicon) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& tok : tokens) {
    const auto e = lexicon.lookup(tok);
    if (!is_content_tag(e.tag)) continue;
    if (seen.insert(e.lemma).second) out.push_back(e.lemma);
  }
  return out;
}

PseudoGlossVocab::PseudoGlossVocab(std::vector<std::string> sorted_lemmas) : lemmas_(std::move(sorted_lemmas)) {
  for (std::size_t i = 0; i < lemmas_.size(); ++i) {
    if (i > 0 && !(lemmas_[i - 1] < lemmas_[i])) {
      throw ConfigError("pseudo-gloss vocabulary must be sorted and unique near '" + lemmas_[i] + "'");
    }
    index_.emplace(lemmas_[i], i);
  }
}

PseudoGlossVocab PseudoGlossVocab::build(const std::vector<std::vector<std::string>>& sentences,
                                         const PosLexicon& lexicon) {
  if (sentences.empty()) throw ConfigError("cannot build a pseudo-gloss vocabulary from an empty corpus");
  std::set<std::string> all;
  for (const auto& s : sentences)
    for (auto& l : extract_pseudo_glosses(s, lexicon)) all.insert(std::move(l));
  if (all.empty()) throw ConfigError("corpus yields no pseudo-glosses; check the lexicon tags");
  return PseudoGlossVocab(std::vector<std::string>(all.begin(), all.end()));
}

std::optional<std::size_t> PseudoGlossVocab::index(const std::string& lemma) const {
  auto it = index_.find(lemma);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

PseudoGlossVocab PseudoGlossVocab::load(const std::filesystem::path& path) {
  auto is = open_text(path);
  std::vector<std::string> lemmas;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lemmas.push_back(line);
  }
  return PseudoGlossVocab(std::move(lemmas));
}

void PseudoGlossVocab::save(const std::filesystem::path& path) const {
  auto os = create_text(path);
  for (const auto& l : lemmas_) os << l << '\n';
}

void EmbeddingTable::add(const std::string& lemma, std::vector<double> v) {
  if (v.size() != dim_) {
    throw ConfigError("embedding for '" + lemma + "' has dimension " + std::to_string(v.size()) + ", table has " +
                      std::to_string(dim_));
  }
  rows_[lemma] = std::move(v);
}

const std::vector<double>* EmbeddingTable::find(const std::string& lemma) const {
  auto it = rows_.find(lemma);
  return it == rows_.end() ? nullptr : &it->second;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  auto is = open_text(path);
  std::size_t count = 0, dim = 0;
  std::string header;
  if (!std::getline(is, header) || !(std::istringstream(header) >> count >> dim)) {
    throw LoadError(path.string() + ": expected '<count> <dim>' header");
  }
  EmbeddingTable table(dim);
  std::string line;
  std::size_t read = 0;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string lemma;
    ls >> lemma;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.size() != dim) {
      throw LoadError(path.string() + ": row '" + lemma + "' has " + std::to_string(v.size()) + " values, expected " +
                      std::to_string(dim));
    }
    table.add(lemma, std::move(v));
    ++read;
  }
  if (read != count) {
    throw LoadError(path.string() + ": header announces " + std::to_string(count) + " rows, found " +
                    std::to_string(read));
  }
  return table;
}

void EmbeddingTable::save(const std::filesystem::path& path) const {
  auto os = create_text(path);
  os << rows_.size() << ' ' << dim_ << '\n';
  os << std::setprecision(17);
  for (const auto& [lemma, v] : rows_) {
    os << lemma;
    for (double x : v) os << ' ' << x;
    os << '\n';
  }
}

PrototypeMatrix build_prototypes(const PseudoGlossVocab& vocab, const EmbeddingTable& table, std::size_t dim) {
  if (table.size() > 0 && table.dim() != dim) {
    throw ConfigError("embedding table dimension " + std::to_string(table.dim()) + " does not match prototype dimension " +
                      std::to_string(dim));
  }
  Tensor p({dim, vocab.size() + 1});
  std::vector<double> v(dim);
  for (std::size_t u = 0; u < vocab.size(); ++u) {
    const auto& lemma = vocab.lemma(u);
    if (const auto* row = table.find(lemma)) {
      v = *row;
    } else {
      Rng rng(stable_hash(lemma));
      for (auto& x : v) x = rng.normal();
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ConfigError("zero embedding for pseudo-gloss '" + lemma + "'");
    for (std::size_t d = 0; d < dim; ++d) p.at(d, u + 1) = v[d] / norm;
  }
  return PrototypeMatrix{std::move(p)};
}

Tensor labels_for(std::span<const std::string> tokens, const PosLexicon& lexicon, const PseudoGlossVocab& vocab) {
  Tensor h({vocab.size()});
  for (const auto& lemma : extract_pseudo_glosses(tokens, lexicon))
    if (auto idx = vocab.index(lemma)) h[*idx] = 1.0;
  return h;
}

}  // namespace hialign
