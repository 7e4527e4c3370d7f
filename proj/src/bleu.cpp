#include "sttk/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "sttk/errors.hpp"

namespace sttk {

namespace {

std::vector<std::string> tokenize(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

using NGramCounts = std::map<std::vector<std::string>, size_t>;

NGramCounts ngrams(const std::vector<std::string>& toks, size_t n) {
  NGramCounts counts;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[std::vector<std::string>(toks.begin() + static_cast<long>(i),
                                      toks.begin() + static_cast<long>(i + n))];
  }
  return counts;
}

}  // namespace

BleuStats corpus_bleu_stats(const std::vector<std::string>& hypotheses,
                            const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size()) {
    throw DimensionError("corpus_bleu: " + std::to_string(hypotheses.size()) + " hypotheses vs " +
                         std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw ContractError("corpus_bleu: empty corpus");

  size_t matches[4] = {0, 0, 0, 0}, totals[4] = {0, 0, 0, 0};
  BleuStats st;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    const auto hyp = tokenize(hypotheses[i]);
    const auto ref = tokenize(references[i]);
    st.hyp_length += hyp.size();
    st.ref_length += ref.size();
    for (size_t n = 1; n <= 4; ++n) {
      const auto h = ngrams(hyp, n);
      const auto r = ngrams(ref, n);
      for (const auto& [gram, count] : h) {
        auto it = r.find(gram);
        if (it != r.end()) matches[n - 1] += std::min(count, it->second);
      }
      totals[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
    }
  }
  if (st.hyp_length == 0 || matches[0] == 0) return st;

  double log_sum = 0.0;
  for (size_t n = 0; n < 4; ++n) {
    const double p = (n > 0 && matches[n] == 0)
                         ? 1.0 / static_cast<double>(totals[n] + 1)
                         : static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    st.precisions[n] = p;
    log_sum += std::log(p);
  }
  st.brevity_penalty =
      st.hyp_length > st.ref_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(st.ref_length) / static_cast<double>(st.hyp_length));
  st.bleu = 100.0 * st.brevity_penalty * std::exp(log_sum / 4.0);
  return st;
}

double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
  return corpus_bleu_stats(hypotheses, references).bleu;
}

size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double edit_accuracy(const std::vector<int>& hyp, const std::vector<int>& ref) {
  if (ref.empty()) return hyp.empty() ? 1.0 : 0.0;
  const double err = static_cast<double>(edit_distance(hyp, ref)) / static_cast<double>(ref.size());
  return std::max(0.0, 1.0 - err);
}

}  // namespace sttk
