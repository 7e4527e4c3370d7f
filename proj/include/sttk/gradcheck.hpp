#pragma once

#include <functional>
#include <vector>

#include "sttk/tensor.hpp"

namespace sttk {

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t coordinates = 0;
  // Parameter index and flat coordinate of the worst disagreement.
  size_t worst_param = 0;
  size_t worst_index = 0;
};

// Compares the analytic gradient of the scalar `f` w.r.t. `params` with
// central differences (f(x+eps) - f(x-eps)) / (2 eps). The error per
// coordinate is |a - n| / max(1, |a|, |n|). `f` must be deterministic.
// Existing grads of `params` are reset.
GradCheckResult grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> params, double eps = 1e-5);

}  // namespace sttk
