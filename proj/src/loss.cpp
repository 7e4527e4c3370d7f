#include "sttk/loss.hpp"

#include <limits>
#include <vector>

#include "sttk/errors.hpp"

namespace sttk {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss: alpha must lie in [0, 1]");
  if (!(epsilon_ls >= 0.0 && epsilon_ls < 1.0)) {
    throw ConfigError("loss: epsilon_ls must lie in [0, 1)");
  }
}

size_t ctc_min_frames(std::span<const int> target) {
  size_t n = target.size();
  for (size_t i = 1; i < target.size(); ++i) n += target[i] == target[i - 1] ? 1 : 0;
  return n;
}

Tensor ctc_loss(const Tensor& log_probs, std::span<const int> target, int blank) {
  if (log_probs.rank() != 2) {
    throw DimensionError("ctc_loss: log_probs must be [T x V], got " + shape_str(log_probs.shape()));
  }
  const size_t frames = log_probs.dim(0), vocab = log_probs.dim(1);
  const size_t needed = ctc_min_frames(target);
  if (frames < needed) {
    throw CtcInfeasibleError("ctc_loss: target needs " + std::to_string(needed) +
                             " frames but only " + std::to_string(frames) + " are available");
  }
  for (int id : target) {
    if (id < 0 || static_cast<size_t>(id) >= vocab || id == blank) {
      throw ContractError("ctc_loss: invalid target id " + std::to_string(id));
    }
  }

  // Blank-extended target: blank, y1, blank, y2, ..., blank.
  const size_t states = 2 * target.size() + 1;
  std::vector<long> ext(states);
  std::vector<long> from_prev(states, -1), from_skip(states, -1);
  for (size_t s = 0; s < states; ++s) {
    ext[s] = s % 2 ? target[(s - 1) / 2] : blank;
    if (s >= 1) from_prev[s] = static_cast<long>(s - 1);
    if (s % 2 == 1 && s >= 3 && ext[s] != ext[s - 2]) from_skip[s] = static_cast<long>(s - 2);
  }

  std::vector<long> emit(states);
  for (size_t s = 0; s < states; ++s) emit[s] = s < 2 ? ext[s] : -1;
  Tensor alpha = gather(log_probs, emit, {states}, kNegInf);
  for (size_t t = 1; t < frames; ++t) {
    for (size_t s = 0; s < states; ++s) emit[s] = static_cast<long>(t * vocab) + ext[s];
    const Tensor stay_or_step =
        log_add_exp(alpha, gather(alpha, from_prev, {states}, kNegInf));
    const Tensor merged = log_add_exp(stay_or_step, gather(alpha, from_skip, {states}, kNegInf));
    alpha = add(merged, gather(log_probs, emit, {states}));
  }

  Tensor total;
  if (states == 1) {
    const std::vector<long> last{0};
    total = gather(alpha, last, {1});
  } else {
    const std::vector<long> last{static_cast<long>(states - 1)};
    const std::vector<long> before_last{static_cast<long>(states - 2)};
    total = log_add_exp(gather(alpha, last, {1}), gather(alpha, before_last, {1}));
  }
  return scale(total, -1.0);
}

size_t count_non_pad(std::span<const int> targets) {
  size_t n = 0;
  for (int t : targets) n += t != kPadId ? 1 : 0;
  return n;
}

Tensor label_smoothed_ce_sum(const Tensor& logits, std::span<const int> targets, double epsilon) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    throw DimensionError("label_smoothed_ce: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(targets.size()) + " targets");
  }
  const size_t vocab = logits.dim(1);
  std::vector<long> picked, rows;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == kPadId) continue;
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= vocab) {
      throw ContractError("label_smoothed_ce: target id " + std::to_string(targets[i]) +
                          " outside vocabulary of " + std::to_string(vocab));
    }
    picked.push_back(static_cast<long>(i * vocab) + targets[i]);
    for (size_t j = 0; j < vocab; ++j) rows.push_back(static_cast<long>(i * vocab + j));
  }
  if (picked.empty()) return Tensor::scalar(0.0);
  const Tensor lsm = log_softmax(logits, 1);
  const Tensor nll = sum(gather(lsm, picked, {picked.size()}));
  const Tensor smooth = sum(gather(lsm, rows, {rows.size()}));
  return scale(add(scale(nll, 1.0 - epsilon), scale(smooth, epsilon / static_cast<double>(vocab))),
               -1.0);
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double epsilon) {
  const size_t n = count_non_pad(targets);
  const Tensor total = label_smoothed_ce_sum(logits, targets, epsilon);
  return n == 0 ? total : scale(total, 1.0 / static_cast<double>(n));
}

Tensor multitask_loss(const Tensor& ce, const Tensor& ctc, const LossWeights& w) {
  w.validate();
  return add(scale(ce, 1.0 - w.alpha), scale(ctc, w.alpha));
}

double multitask_loss(double ce, double ctc, const LossWeights& w) {
  w.validate();
  return (1.0 - w.alpha) * ce + w.alpha * ctc;
}

}  // namespace sttk
