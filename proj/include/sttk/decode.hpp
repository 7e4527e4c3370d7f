#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sttk/model.hpp"
#include "sttk/tensor.hpp"
#include "sttk/text.hpp"

namespace sttk {

struct Hypothesis {
  std::vector<int> tokens;  // starts with bos; ends with eos when finished
  double logprob = 0.0;
  bool finished = false;
  double norm_score = 0.0;

  // Generated tokens, eos included.
  size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

struct DecodeConfig {
  size_t beam = 5;
  double lennorm_beta = 1.0;
  double max_len_factor = 1.0;
  size_t max_len_extra = 10;

  void validate() const;
  // floor(max_len_factor * source_length) + max_len_extra, at least 1.
  size_t max_length(size_t source_length) const;
};

// Next-token log-probabilities after `prefix` (which starts with bos).
using StepFn = std::function<std::vector<double>(std::span<const int> prefix)>;

// log((1/K) sum_k exp(row_k)) per vocabulary entry.
std::vector<double> ensemble_log_prob(const std::vector<std::vector<double>>& rows);

double length_normalize(double logprob, size_t length, double beta);

struct BeamResult {
  // Ranked by norm_score, best first. Holds unfinished hypotheses only when
  // none finished within the length cap.
  std::vector<Hypothesis> hypotheses;
  bool unfinished = false;

  const Hypothesis& best() const { return hypotheses.front(); }
};

// Beam search over the ensemble of `models`. pad, bos and blank are never
// proposed. Candidates are ranked by cumulative logprob, then smaller token
// id, then parent rank.
BeamResult beam_search(std::span<const StepFn> models, size_t max_len, const DecodeConfig& cfg);

// Argmax decoding (smallest id on ties) with the same exclusions and cap.
Hypothesis greedy_decode(std::span<const StepFn> models, size_t max_len);

// Log-softmax of the model's next-token logits over `memory`.
StepFn model_step_fn(const SpeechTranslationModel& model, const Tensor& memory);

// Per-frame argmax, repeats collapsed, blanks removed.
std::vector<int> ctc_greedy_decode(const Tensor& ctc_logits, int blank = kBlankId);

}  // namespace sttk
