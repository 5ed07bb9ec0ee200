// SPDX-License-Identifier: Apache-2.0
#include "hialign/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "hialign/errors.hpp"
#include "hialign/hfat.hpp"
#include "hialign/rng.hpp"

namespace hialign {

namespace {

constexpr PosTag kContentTags[] = {PosTag::kNoun, PosTag::kVerb, PosTag::kAdj, PosTag::kAdv,
                                   PosTag::kNum,  PosTag::kPron, PosTag::kPropn};
constexpr const char* kSplits[] = {"train", "dev", "test"};

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

PosTag gloss_tag(std::size_t k) { return kContentTags[k % std::size(kContentTags)]; }

void append_rows(std::vector<double>& dst, const Tensor& rows) { dst.insert(dst.end(), rows.data().begin(), rows.data().end()); }

}  // namespace

void SyntheticCorpusConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("corpus config: " + msg); };
  if (glosses < 2) fail("need at least 2 glosses");
  if (frames_min < 1 || frames_max < frames_min) fail("invalid frames-per-gloss range");
  if (!(noise >= 0.0)) fail("noise must be non-negative");
  if (!(pad_prob >= 0.0 && pad_prob <= 1.0)) fail("pad_prob outside [0, 1]");
  if (pad_min < 1 || pad_max < pad_min) fail("invalid pad length range");
  if (glosses_min < 1 || glosses_max < glosses_min) fail("invalid glosses-per-sample range");
  if (input_dim == 0 || embedding_dim == 0) fail("dimensions must be positive");
  if (train == 0) fail("training split must be non-empty");
  for (const auto& w : function_words)
    if (w.empty() || w.find_first_of(" \t\n") != std::string::npos) fail("function words must be single tokens");
}

const std::vector<Sample>& Corpus::split(std::string_view name) const {
  if (name == "train") return train;
  if (name == "dev") return dev;
  if (name == "test") return test;
  throw ContractError("unknown split '" + std::string(name) + "'");
}

std::string gloss_lemma(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "g%03zu", k);
  return buf;
}

std::string gloss_surface(std::size_t k) {
  // Verbs carry an inflection so lemmatization has something to undo.
  return gloss_tag(k) == PosTag::kVerb ? gloss_lemma(k) + "t" : gloss_lemma(k);
}

Corpus generate_corpus(const SyntheticCorpusConfig& cfg) {
  cfg.validate();
  const Rng root(cfg.seed);
  Corpus corpus;

  for (std::size_t k = 0; k < cfg.glosses; ++k) {
    corpus.lexicon.add(gloss_surface(k), gloss_lemma(k), gloss_tag(k));
  }
  for (const auto& w : cfg.function_words) corpus.lexicon.add(w, w, PosTag::kOther);

  Rng embed_rng = root.split("embeddings");
  corpus.embeddings = EmbeddingTable(cfg.embedding_dim);
  for (std::size_t k = 0; k < cfg.glosses; ++k) {
    std::vector<double> v(cfg.embedding_dim);
    double norm = 0.0;
    for (auto& x : v) {
      x = embed_rng.normal();
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    corpus.embeddings.add(gloss_lemma(k), std::move(v));
  }

  Rng template_rng = root.split("templates");
  std::vector<Tensor> templates;
  for (std::size_t k = 0; k < cfg.glosses; ++k) {
    Tensor t({cfg.frames_max, cfg.input_dim});
    for (auto& v : t.storage()) v = template_rng.normal();
    templates.push_back(std::move(t));
  }

  auto render = [&](Rng& rng) {
    Sample s;
    const std::size_t n = rng.uniform_int(cfg.glosses_min, cfg.glosses_max);
    std::vector<double> frames;
    std::size_t length = 0;
    auto maybe_pad = [&] {
      if (cfg.pad_prob <= 0.0 || !rng.bernoulli(cfg.pad_prob)) return;
      const std::size_t len = rng.uniform_int(cfg.pad_min, cfg.pad_max);
      for (std::size_t i = 0; i < len * cfg.input_dim; ++i) frames.push_back(cfg.noise * rng.normal());
      length += len;
    };
    for (std::size_t g = 0; g < n; ++g) {
      const std::size_t k = rng.uniform_int(0, cfg.glosses - 1);
      s.glosses.push_back(k);
      maybe_pad();
      const std::size_t f = rng.uniform_int(cfg.frames_min, cfg.frames_max);
      for (std::size_t r = 0; r < f; ++r) {
        const std::size_t src =
            f == 1 ? 0 : static_cast<std::size_t>(std::lround(static_cast<double>(r * (cfg.frames_max - 1)) / static_cast<double>(f - 1)));
        const Tensor row = templates[k].slice_rows(src, src + 1);
        append_rows(frames, row);
      }
      if (cfg.noise > 0.0)
        for (std::size_t i = frames.size() - f * cfg.input_dim; i < frames.size(); ++i) frames[i] += cfg.noise * rng.normal();
      length += f;
      if (!cfg.function_words.empty()) s.sentence.push_back(cfg.function_words[k % cfg.function_words.size()]);
      s.sentence.push_back(gloss_surface(k));
    }
    maybe_pad();
    for (auto& v : frames) v = to_f32(v);
    s.frames = Tensor({length, cfg.input_dim}, std::move(frames));
    return s;
  };

  Rng sample_rng = root.split("samples");
  std::vector<Sample>* splits[] = {&corpus.train, &corpus.dev, &corpus.test};
  const std::size_t counts[] = {cfg.train, cfg.dev, cfg.test};
  for (std::size_t s = 0; s < 3; ++s) {
    Rng split_rng = sample_rng.split(kSplits[s]);
    for (std::size_t i = 0; i < counts[s]; ++i) splits[s]->push_back(render(split_rng));
  }
  return corpus;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw IoError("cannot create " + (dir / "features").string() + ": " + ec.message());
  nlohmann::ordered_json manifest;
  std::ofstream sentences(dir / "sentences.txt", std::ios::trunc);
  if (!sentences) throw IoError("cannot write " + (dir / "sentences.txt").string());
  std::size_t line = 0;
  for (const char* split : kSplits) {
    auto entries = nlohmann::ordered_json::array();
    const auto& samples = corpus.split(split);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      char name[64];
      std::snprintf(name, sizeof(name), "features/%s_%05zu.hfat", split, i);
      hfat::save(dir / name, samples[i].frames, hfat::DType::kF32);
      sentences << join_tokens(samples[i].sentence) << '\n';
      entries.push_back({{"features", name}, {"sentence_line", line++}});
    }
    manifest[split] = std::move(entries);
  }
  std::ofstream(dir / "manifest.json", std::ios::trunc) << manifest.dump(1) << '\n';
  corpus.lexicon.save(dir / "lexicon.tsv");
  corpus.embeddings.save(dir / "embeddings.txt");
}

Corpus load_corpus(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::is_directory(path) ? path / "manifest.json" : path;
  const fs::path dir = manifest_path.parent_path();
  std::ifstream ms(manifest_path);
  if (!ms) throw IoError("cannot open manifest " + manifest_path.string());
  nlohmann::json manifest;
  try {
    ms >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(manifest_path.string() + ": " + e.what());
  }

  std::vector<std::string> lines;
  {
    std::ifstream ss(dir / "sentences.txt");
    if (!ss) throw IoError("cannot open " + (dir / "sentences.txt").string());
    std::string l;
    while (std::getline(ss, l)) lines.push_back(l);
  }

  Corpus corpus;
  std::size_t width = 0;
  std::vector<Sample>* dsts[] = {&corpus.train, &corpus.dev, &corpus.test};
  for (std::size_t si = 0; si < 3; ++si) {
    const char* split = kSplits[si];
    if (!manifest.contains(split)) continue;
    auto& dst = *dsts[si];
    std::size_t idx = 0;
    for (const auto& entry : manifest[split]) {
      const std::string where = std::string(split) + "[" + std::to_string(idx++) + "]";
      if (!entry.contains("features") || !entry.contains("sentence_line")) {
        throw LoadError("manifest entry " + where + " lacks features or sentence_line");
      }
      const auto feat = dir / entry["features"].get<std::string>();
      if (!fs::exists(feat)) throw IoError("manifest entry " + where + ": missing feature file " + feat.string());
      Sample s;
      try {
        s.frames = hfat::load(feat);
      } catch (const LoadError& e) {
        throw LoadError("manifest entry " + where + ": " + e.what());
      }
      if (s.frames.rank() != 2) throw LoadError("manifest entry " + where + ": features must be rank 2");
      if (width == 0) width = s.frames.cols();
      if (s.frames.cols() != width) {
        throw LoadError("manifest entry " + where + ": feature width " + std::to_string(s.frames.cols()) +
                        " differs from " + std::to_string(width));
      }
      const auto line = entry["sentence_line"].get<long long>();
      if (line < 0 || static_cast<std::size_t>(line) >= lines.size()) {
        throw LoadError("manifest entry " + where + ": sentence_line " + std::to_string(line) + " out of range (" +
                        std::to_string(lines.size()) + " lines)");
      }
      s.sentence = tokenize(lines[static_cast<std::size_t>(line)]);
      dst.push_back(std::move(s));
    }
  }
  if (fs::exists(dir / "lexicon.tsv")) corpus.lexicon = PosLexicon::load(dir / "lexicon.tsv");
  if (fs::exists(dir / "embeddings.txt")) corpus.embeddings = EmbeddingTable::load(dir / "embeddings.txt");
  return corpus;
}

Tensor Batch::sample_frames(std::size_t b) const {
  const std::size_t tmax = frames.dim(1), d = frames.dim(2), len = frame_lengths.at(b);
  std::vector<double> data(frames.data().begin() + static_cast<std::ptrdiff_t>(b * tmax * d),
                           frames.data().begin() + static_cast<std::ptrdiff_t>((b * tmax + len) * d));
  return Tensor({len, d}, std::move(data));
}

std::vector<int> Batch::sample_tokens(std::size_t b) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < tokens.at(b).size(); ++i)
    if (token_mask[b][i]) out.push_back(tokens[b][i]);
  return out;
}

std::vector<Batch> make_batches(const std::vector<Sample>& samples, const TokenVocab& vocab, std::size_t batch_size,
                                std::uint64_t seed, bool shuffle) {
  if (batch_size == 0) throw ContractError("make_batches: batch_size must be at least 1");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng = Rng(seed).split("shuffle");
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(0, i - 1)]);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
    std::size_t tmax = 0, lmax = 0, d = 0;
    std::vector<std::vector<int>> seqs;
    for (auto i : b.indices) {
      tmax = std::max(tmax, samples[i].frames.rows());
      d = samples[i].frames.cols();
      seqs.push_back(vocab.encode(samples[i].sentence));
      lmax = std::max(lmax, seqs.back().size());
    }
    b.frames = Tensor({b.indices.size(), tmax, d});
    for (std::size_t k = 0; k < b.indices.size(); ++k) {
      const auto& f = samples[b.indices[k]].frames;
      std::copy(f.data().begin(), f.data().end(), b.frames.data().begin() + static_cast<std::ptrdiff_t>(k * tmax * d));
      b.frame_lengths.push_back(f.rows());
      std::vector<bool> mask(tmax, false);
      std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(f.rows()), true);
      b.frame_mask.push_back(std::move(mask));
      std::vector<bool> tmask(lmax, false);
      std::fill(tmask.begin(), tmask.begin() + static_cast<std::ptrdiff_t>(seqs[k].size()), true);
      seqs[k].resize(lmax, TokenVocab::kPad);
      b.tokens.push_back(std::move(seqs[k]));
      b.token_mask.push_back(std::move(tmask));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace hialign
