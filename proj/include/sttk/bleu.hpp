#pragma once

#include <string>
#include <vector>

namespace sttk {

struct BleuStats {
  double bleu = 0.0;  // percentage
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 0.0;
  size_t hyp_length = 0;
  size_t ref_length = 0;
};

// Case-sensitive 4-gram corpus BLEU over whitespace tokens. Zero-match
// precisions for n >= 2 use (matches + 1) / (total + 1).
BleuStats corpus_bleu_stats(const std::vector<std::string>& hypotheses,
                            const std::vector<std::string>& references);
double corpus_bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);

// Edit-distance accuracy: max(0, 1 - levenshtein(hyp, ref) / |ref|).
double edit_accuracy(const std::vector<int>& hyp, const std::vector<int>& ref);
size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

}  // namespace sttk
