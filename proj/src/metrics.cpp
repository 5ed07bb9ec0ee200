// SPDX-License-Identifier: Apache-2.0
#include "hialign/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <json.hpp>

#include "hialign/errors.hpp"

namespace hialign {

namespace {

std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, std::size_t> out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                               t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  for (std::size_t n = 0; n < 4; ++n) j["bleu" + std::to_string(n + 1)] = bleu[n];
  j["rouge_l"] = rouge_l;
  j["bp"] = bp;
  j["n"] = bleu.size();
  j["count"] = count;
  return j.dump(2);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& hypothesis, const Tokens& reference) {
  const std::size_t l = lcs_length(hypothesis, reference);
  if (l == 0) return 0.0;
  const double p = static_cast<double>(l) / static_cast<double>(hypothesis.size());
  const double r = static_cast<double>(l) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

EvalReport evaluate_corpus(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references) {
  if (hypotheses.empty()) throw DomainError("bleu: empty corpus");
  if (hypotheses.size() != references.size()) {
    throw DimensionError("bleu: " + std::to_string(hypotheses.size()) + " hypotheses for " +
                         std::to_string(references.size()) + " references");
  }
  EvalReport rep;
  rep.count = hypotheses.size();
  std::array<std::size_t, 4> matched{}, total{};
  std::size_t c = 0, r = 0;
  double rouge = 0.0;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& h = hypotheses[s];
    const auto& ref = references[s];
    c += h.size();
    r += ref.size();
    rouge += rouge_l(h, ref);
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hc = ngram_counts(h, n), rc = ngram_counts(ref, n);
      for (const auto& [gram, k] : hc) {
        total[n - 1] += k;
        const auto it = rc.find(gram);
        if (it != rc.end()) matched[n - 1] += std::min(k, it->second);
      }
    }
  }
  rep.rouge_l = rouge / static_cast<double>(hypotheses.size());
  // An empty hypothesis corpus has no defined penalty; every score is 0 then.
  rep.bp = c == 0 ? 0.0 : (c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0);
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    rep.precision[n] = total[n] == 0 ? 0.0 : static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    if (rep.precision[n] == 0.0) zero = true;
    if (!zero) log_sum += std::log(rep.precision[n]);
    rep.bleu[n] = zero ? 0.0 : 100.0 * rep.bp * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return rep;
}

}  // namespace hialign
