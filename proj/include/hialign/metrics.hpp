// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

// Corpus BLEU-1..4 and ROUGE-L, single reference per hypothesis.
namespace hialign {

using Tokens = std::vector<std::string>;

struct EvalReport {
  std::array<double, 4> bleu{};        // BLEU-1..4 on a 0-100 scale
  std::array<double, 4> precision{};   // clipped n-gram precisions p_1..p_4
  double rouge_l = 0.0;                // mean sentence F1, 0-1
  double bp = 0.0;                     // brevity penalty
  std::size_t count = 0;               // sentence pairs

  // {"bleu1", .., "bleu4", "rouge_l", "bp", "n", "count"}, where n is the
  // highest n-gram order.
  std::string to_json() const;
};

std::size_t lcs_length(const Tokens& a, const Tokens& b);
// F1 of LCS precision and recall; 0 when the LCS is empty.
double rouge_l(const Tokens& hypothesis, const Tokens& reference);

// Unsmoothed corpus BLEU. Throws DomainError on an empty corpus and
// DimensionError on a count mismatch.
EvalReport evaluate_corpus(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references);

}  // namespace hialign
