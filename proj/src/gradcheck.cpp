#include "sttk/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sttk/errors.hpp"

namespace sttk {

GradCheckResult grad_check(const std::function<Tensor()>& f,
                           std::vector<Tensor> params, double eps) {
  if (eps < 1e-7 || eps > 1e-3) {
    throw ContractError("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (auto& p : params) p.zero_grad();
  f().backward();

  GradCheckResult result;
  NoGradGuard no_grad;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double plus = f().item();
      values[i] = original - eps;
      const double minus = f().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      ++result.coordinates;
      if (err > result.max_rel_error || std::isnan(err)) {
        result.max_rel_error = std::isnan(err) ? INFINITY : err;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace sttk
