#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sttk/gradcheck.hpp"
#include "sttk/model.hpp"

namespace sttk {

struct NamedGradCheck {
  std::string name;
  GradCheckResult result;
};

// Finite-difference checks of every differentiable operation on random
// shapes with dimensions in [1, 8].
std::vector<NamedGradCheck> op_gradcheck_suite(uint64_t seed, double eps = 1e-5);

// Smallest SATE model: hidden 8, 2 heads, 2 acoustic + 1 textual encoder
// layers, 1 decoder layer, vocab 7, no dropout.
ModelConfig tiny_gradcheck_config();

// Checks d(multitask loss)/d(every parameter) of the tiny model on a
// 12-frame random utterance.
GradCheckResult tiny_model_gradcheck(uint64_t seed, double eps = 1e-5);

struct CtcOracleReport {
  double max_abs_diff = 0.0;   // over feasible cases
  size_t cases = 0;
  size_t infeasible = 0;        // both sides agreed there is no alignment
  size_t disagreements = 0;     // feasibility verdicts differ
};

// Compares the CTC forward recursion with brute-force path enumeration for
// T in [1, 6], L in [0, 3], V in [2, 4], `trials` random distributions each.
CtcOracleReport ctc_oracle_sweep(size_t trials, uint64_t seed);

}  // namespace sttk
