#pragma once

#include <span>

#include "sttk/tensor.hpp"
#include "sttk/text.hpp"

namespace sttk {

struct LossWeights {
  double alpha = 0.3;       // CTC weight
  double epsilon_ls = 0.1;  // label-smoothing mass

  void validate() const;
};

// Frames needed to emit `target`: its length plus one blank per adjacent
// repeat.
size_t ctc_min_frames(std::span<const int> target);

// -log sum over alignments collapsing to `target` of prod_t p_t(pi_t).
// `log_probs` is [T x V] of per-frame log-distributions. The forward
// recursion over the blank-extended target runs on graph ops, so the
// gradient comes from the same autodiff machinery as everything else.
// Throws CtcInfeasibleError when T < ctc_min_frames(target).
Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank = kBlankId);

// Sum over rows whose target is not pad of -sum_i q_i log softmax(logits)_i
// with q = (1 - eps) onehot + eps / V. Returns a zero scalar when every
// target is pad.
Tensor label_smoothed_ce_sum(const Tensor& logits, std::span<const int> targets, double epsilon);
// Token mean of the above over non-pad targets.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double epsilon);
size_t count_non_pad(std::span<const int> targets);

// (1 - alpha) * ce + alpha * ctc
Tensor multitask_loss(const Tensor& ce, const Tensor& ctc, const LossWeights& w);
double multitask_loss(double ce, double ctc, const LossWeights& w);

}  // namespace sttk
