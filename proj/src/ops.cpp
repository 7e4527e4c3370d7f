#include <algorithm>
#include <cmath>
#include <limits>

#include "sttk/errors.hpp"
#include "sttk/tensor.hpp"

namespace sttk {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Grad buffer of an input, or nullptr when the input is not tracked.
std::vector<double>* grad_of(const Tensor& t) {
  if (!t.defined() || !t.requires_grad()) return nullptr;
  return &t.node()->ensure_grad();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void require_rank2(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_str(x.shape()));
  }
}

size_t last_dim(const Tensor& x) { return x.shape().back(); }

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) out[i] = fwd(xs[i]);
  return make_result(x.shape(), std::move(out), {x},
                     [x, deriv](const detail::Node& self) {
                       auto* gx = grad_of(x);
                       if (!gx) return;
                       const auto xs = x.data();
                       for (size_t i = 0; i < xs.size(); ++i) {
                         (*gx)[i] += self.grad[i] * deriv(xs[i], self.data[i]);
                       }
                     });
}

double sigmoid_scalar(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Decomposes a shape around `axis` into (outer, extent, inner).
struct AxisView {
  size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape));
  }
  AxisView v;
  for (size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const detail::Node& self) {
                       if (auto* g = grad_of(a))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       if (auto* g = grad_of(b))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const detail::Node& self) {
                       if (auto* g = grad_of(a))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       if (auto* g = grad_of(b))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] -= self.grad[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const detail::Node& self) {
                       const auto as = a.data(), bs = b.data();
                       if (auto* g = grad_of(a))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * bs[i];
                       if (auto* g = grad_of(b))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * as[i];
                     });
}

Tensor scale(const Tensor& x, double factor) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * factor;
  return make_result(x.shape(), std::move(out), {x},
                     [x, factor](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * factor;
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const size_t n = last_dim(x);
  if (bias.size() != n) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  const auto xs = x.data(), bs = bias.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + bs[i % n];
  return make_result(x.shape(), std::move(out), {x, bias},
                     [x, bias, n](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                       if (auto* g = grad_of(bias))
                         for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i % n] += self.grad[i];
                     });
}

Tensor mul_bias(const Tensor& x, const Tensor& gain) {
  const size_t n = last_dim(x);
  if (gain.size() != n) {
    throw DimensionError("mul_bias: gain " + shape_str(gain.shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  const auto xs = x.data(), gs = gain.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * gs[i % n];
  return make_result(x.shape(), std::move(out), {x, gain},
                     [x, gain, n](const detail::Node& self) {
                       const auto xs = x.data(), gs = gain.data();
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * gs[i % n];
                       if (auto* g = grad_of(gain))
                         for (size_t i = 0; i < self.grad.size(); ++i) (*g)[i % n] += self.grad[i] * xs[i];
                     });
}

Tensor scale_by_element(const Tensor& x, const Tensor& s, size_t index) {
  if (index >= s.size()) throw DimensionError("scale_by_element: index out of range");
  const double f = s.at(index);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * f;
  return make_result(x.shape(), std::move(out), {x, s},
                     [x, s, index](const detail::Node& self) {
                       const double f = s.at(index);
                       const auto xs = x.data();
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * f;
                       if (auto* g = grad_of(s)) {
                         double acc = 0.0;
                         for (size_t i = 0; i < xs.size(); ++i) acc += self.grad[i] * xs[i];
                         (*g)[index] += acc;
                       }
                     });
}

Tensor add_constant(const Tensor& x, std::span<const double> constant) {
  if (constant.size() != x.size()) {
    throw DimensionError("add_constant: constant has " + std::to_string(constant.size()) +
                         " values for " + shape_str(x.shape()));
  }
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + constant[i];
  return make_result(x.shape(), std::move(out), {x},
                     [x](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(m * n, 0.0);
  for (size_t i = 0; i < m; ++i) {
    double* crow = &out[i * n];
    for (size_t t = 0; t < k; ++t) {
      const double av = as[i * k + t];
      if (av == 0.0) continue;
      const double* brow = &bs[t * n];
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return make_result({m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](const detail::Node& self) {
                       const auto as = a.data(), bs = b.data();
                       const double* dc = self.grad.data();
                       if (auto* ga = grad_of(a)) {
                         // dA = dC * B^T
                         for (size_t i = 0; i < m; ++i) {
                           const double* dcrow = dc + i * n;
                           for (size_t t = 0; t < k; ++t) {
                             const double* brow = &bs[t * n];
                             double acc = 0.0;
                             for (size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                             (*ga)[i * k + t] += acc;
                           }
                         }
                       }
                       if (auto* gb = grad_of(b)) {
                         // dB = A^T * dC
                         for (size_t i = 0; i < m; ++i) {
                           const double* dcrow = dc + i * n;
                           for (size_t t = 0; t < k; ++t) {
                             const double av = as[i * k + t];
                             if (av == 0.0) continue;
                             double* gbrow = &(*gb)[t * n];
                             for (size_t j = 0; j < n; ++j) gbrow[j] += av * dcrow[j];
                           }
                         }
                       }
                     });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const size_t r = x.dim(0), c = x.dim(1);
  const auto xs = x.data();
  std::vector<double> out(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j * r + i] = xs[i * c + j];
  return make_result({c, r}, std::move(out), {x},
                     [x, r, c](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < r; ++i)
                           for (size_t j = 0; j < c; ++j) (*g)[i * c + j] += self.grad[j * r + i];
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x},
                     [x](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
                     });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return sigmoid_scalar(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor swish(const Tensor& x) {
  return unary(
      x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor glu(const Tensor& x) {
  const size_t n = last_dim(x);
  if (n % 2 != 0) throw DimensionError("glu: last dimension must be even, got " + shape_str(x.shape()));
  const size_t h = n / 2, rows = x.size() / n;
  Shape shape = x.shape();
  shape.back() = h;
  const auto xs = x.data();
  std::vector<double> out(rows * h);
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < h; ++j)
      out[r * h + j] = xs[r * n + j] * sigmoid_scalar(xs[r * n + h + j]);
  return make_result(std::move(shape), std::move(out), {x},
                     [x, n, h, rows](const detail::Node& self) {
                       auto* g = grad_of(x);
                       if (!g) return;
                       const auto xs = x.data();
                       for (size_t r = 0; r < rows; ++r) {
                         for (size_t j = 0; j < h; ++j) {
                           const double a = xs[r * n + j];
                           const double s = sigmoid_scalar(xs[r * n + h + j]);
                           const double dy = self.grad[r * h + j];
                           (*g)[r * n + j] += dy * s;
                           (*g)[r * n + h + j] += dy * a * s * (1.0 - s);
                         }
                       }
                     });
}

Tensor log_add_exp(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "log_add_exp");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double m = std::max(as[i], bs[i]);
    out[i] = (m == kNegInf) ? kNegInf
                            : m + std::log(std::exp(as[i] - m) + std::exp(bs[i] - m));
  }
  return make_result(a.shape(), std::move(out), {a, b},
                     [a, b](const detail::Node& self) {
                       const auto as = a.data(), bs = b.data();
                       auto* ga = grad_of(a);
                       auto* gb = grad_of(b);
                       for (size_t i = 0; i < self.data.size(); ++i) {
                         if (self.data[i] == kNegInf) continue;
                         if (ga) (*ga)[i] += self.grad[i] * std::exp(as[i] - self.data[i]);
                         if (gb) (*gb)[i] += self.grad[i] * std::exp(bs[i] - self.data[i]);
                       }
                     });
}

Tensor softmax(const Tensor& x, size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size(), 0.0);
  for (size_t o = 0; o < v.outer; ++o) {
    for (size_t in = 0; in < v.inner; ++in) {
      const size_t base = o * v.extent * v.inner + in;
      double mx = kNegInf;
      for (size_t e = 0; e < v.extent; ++e) mx = std::max(mx, xs[base + e * v.inner]);
      if (mx == kNegInf) continue;
      double total = 0.0;
      for (size_t e = 0; e < v.extent; ++e) {
        const double ev = std::exp(xs[base + e * v.inner] - mx);
        out[base + e * v.inner] = ev;
        total += ev;
      }
      for (size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x, v](const detail::Node& self) {
                       auto* g = grad_of(x);
                       if (!g) return;
                       for (size_t o = 0; o < v.outer; ++o) {
                         for (size_t in = 0; in < v.inner; ++in) {
                           const size_t base = o * v.extent * v.inner + in;
                           double dot = 0.0;
                           for (size_t e = 0; e < v.extent; ++e) {
                             const size_t i = base + e * v.inner;
                             dot += self.grad[i] * self.data[i];
                           }
                           for (size_t e = 0; e < v.extent; ++e) {
                             const size_t i = base + e * v.inner;
                             (*g)[i] += self.data[i] * (self.grad[i] - dot);
                           }
                         }
                       }
                     });
}

Tensor log_softmax(const Tensor& x, size_t axis) {
  const AxisView v = axis_view(x.shape(), axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size(), kNegInf);
  for (size_t o = 0; o < v.outer; ++o) {
    for (size_t in = 0; in < v.inner; ++in) {
      const size_t base = o * v.extent * v.inner + in;
      double mx = kNegInf;
      for (size_t e = 0; e < v.extent; ++e) mx = std::max(mx, xs[base + e * v.inner]);
      if (mx == kNegInf) continue;
      double total = 0.0;
      for (size_t e = 0; e < v.extent; ++e) total += std::exp(xs[base + e * v.inner] - mx);
      const double lse = mx + std::log(total);
      for (size_t e = 0; e < v.extent; ++e) {
        out[base + e * v.inner] = xs[base + e * v.inner] - lse;
      }
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x, v](const detail::Node& self) {
                       auto* g = grad_of(x);
                       if (!g) return;
                       for (size_t o = 0; o < v.outer; ++o) {
                         for (size_t in = 0; in < v.inner; ++in) {
                           const size_t base = o * v.extent * v.inner + in;
                           double total = 0.0;
                           for (size_t e = 0; e < v.extent; ++e) total += self.grad[base + e * v.inner];
                           for (size_t e = 0; e < v.extent; ++e) {
                             const size_t i = base + e * v.inner;
                             (*g)[i] += self.grad[i] - std::exp(self.data[i]) * total;
                           }
                         }
                       }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const size_t n = last_dim(x);
  if (gain.size() != n || bias.size() != n) {
    throw DimensionError("layer_norm: gain/bias length must equal " + std::to_string(n));
  }
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  const size_t rows = x.size() / n;
  const auto xs = x.data(), gs = gain.data(), bs = bias.data();
  std::vector<double> out(xs.size());
  std::vector<double> xhat(xs.size());
  std::vector<double> inv_std(rows);
  for (size_t r = 0; r < rows; ++r) {
    const double* row = &xs[r * n];
    double mu = 0.0;
    for (size_t j = 0; j < n; ++j) mu += row[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mu) * is;
      xhat[r * n + j] = h;
      out[r * n + j] = gs[j] * h + bs[j];
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [x, gain, bias, n, rows, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](const detail::Node& self) {
        const auto gs = gain.data();
        auto* gx = grad_of(x);
        auto* gg = grad_of(gain);
        auto* gb = grad_of(bias);
        std::vector<double> dh(n);
        for (size_t r = 0; r < rows; ++r) {
          const double* dy = &self.grad[r * n];
          const double* h = &xhat[r * n];
          if (gg) for (size_t j = 0; j < n; ++j) (*gg)[j] += dy[j] * h[j];
          if (gb) for (size_t j = 0; j < n; ++j) (*gb)[j] += dy[j];
          if (!gx) continue;
          double mean_dh = 0.0, mean_dh_h = 0.0;
          for (size_t j = 0; j < n; ++j) {
            dh[j] = dy[j] * gs[j];
            mean_dh += dh[j];
            mean_dh_h += dh[j] * h[j];
          }
          mean_dh /= static_cast<double>(n);
          mean_dh_h /= static_cast<double>(n);
          for (size_t j = 0; j < n; ++j) {
            (*gx)[r * n + j] += inv_std[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result({1}, {total}, {x}, [x](const detail::Node& self) {
    if (auto* g = grad_of(x))
      for (double& gv : *g) gv += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor slice_rows(const Tensor& x, size_t start, size_t count) {
  require_rank2(x, "slice_rows");
  if (count == 0 || start + count > x.dim(0)) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_str(x.shape()));
  }
  const size_t c = x.dim(1);
  const auto xs = x.data();
  std::vector<double> out(xs.begin() + start * c, xs.begin() + (start + count) * c);
  return make_result({count, c}, std::move(out), {x},
                     [x, start, c](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < self.grad.size(); ++i) (*g)[start * c + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& x, size_t start, size_t count) {
  require_rank2(x, "slice_cols");
  if (count == 0 || start + count > x.dim(1)) {
    throw DimensionError("slice_cols: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_str(x.shape()));
  }
  const size_t r = x.dim(0), c = x.dim(1);
  const auto xs = x.data();
  std::vector<double> out(r * count);
  for (size_t i = 0; i < r; ++i)
    std::copy_n(&xs[i * c + start], count, &out[i * count]);
  return make_result({r, count}, std::move(out), {x},
                     [x, start, r, c, count](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < r; ++i)
                           for (size_t j = 0; j < count; ++j)
                             (*g)[i * c + start + j] += self.grad[i * count + j];
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const size_t c = parts[0].dim(1);
  size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.dim(1) != c) throw DimensionError("concat_rows: column mismatch " +
                                            shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({rows, c}, std::move(out), parts,
                     [parts](const detail::Node& self) {
                       size_t offset = 0;
                       for (const auto& p : parts) {
                         if (auto* g = grad_of(p))
                           for (size_t i = 0; i < p.size(); ++i) (*g)[i] += self.grad[offset + i];
                         offset += p.size();
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const size_t r = parts[0].dim(0);
  size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.dim(0) != r) throw DimensionError("concat_cols: row mismatch " +
                                            shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    cols += p.dim(1);
  }
  std::vector<double> out(r * cols);
  size_t offset = 0;
  for (const auto& p : parts) {
    const size_t pc = p.dim(1);
    const auto ps = p.data();
    for (size_t i = 0; i < r; ++i) std::copy_n(&ps[i * pc], pc, &out[i * cols + offset]);
    offset += pc;
  }
  return make_result({r, cols}, std::move(out), parts,
                     [parts, r, cols](const detail::Node& self) {
                       size_t offset = 0;
                       for (const auto& p : parts) {
                         const size_t pc = p.dim(1);
                         if (auto* g = grad_of(p))
                           for (size_t i = 0; i < r; ++i)
                             for (size_t j = 0; j < pc; ++j)
                               (*g)[i * pc + j] += self.grad[i * cols + offset + j];
                         offset += pc;
                       }
                     });
}

Tensor gather(const Tensor& x, std::span<const long> index, Shape out_shape,
              double fill) {
  if (numel(out_shape) != index.size()) {
    throw DimensionError("gather: " + std::to_string(index.size()) +
                         " indices for output " + shape_str(out_shape));
  }
  const auto xs = x.data();
  std::vector<double> out(index.size());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= static_cast<long>(xs.size())) {
      throw DimensionError("gather: index " + std::to_string(index[i]) +
                           " outside " + shape_str(x.shape()));
    }
    out[i] = index[i] >= 0 ? xs[static_cast<size_t>(index[i])] : fill;
  }
  std::vector<long> idx(index.begin(), index.end());
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, idx = std::move(idx)](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < idx.size(); ++i)
                           if (idx[i] >= 0) (*g)[static_cast<size_t>(idx[i])] += self.grad[i];
                     });
}

Tensor scatter_add(const Tensor& x, std::span<const long> index, Shape out_shape) {
  if (index.size() != x.size()) {
    throw DimensionError("scatter_add: " + std::to_string(index.size()) +
                         " indices for input " + shape_str(x.shape()));
  }
  const size_t n = numel(out_shape);
  const auto xs = x.data();
  std::vector<double> out(n, 0.0);
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0) continue;
    if (static_cast<size_t>(index[i]) >= n) {
      throw DimensionError("scatter_add: index " + std::to_string(index[i]) +
                           " outside " + shape_str(out_shape));
    }
    out[static_cast<size_t>(index[i])] += xs[i];
  }
  std::vector<long> idx(index.begin(), index.end());
  return make_result(std::move(out_shape), std::move(out), {x},
                     [x, idx = std::move(idx)](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < idx.size(); ++i)
                           if (idx[i] >= 0) (*g)[i] += self.grad[static_cast<size_t>(idx[i])];
                     });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  if (ids.empty()) throw DimensionError("embedding: empty id sequence");
  const size_t v = table.dim(0), d = table.dim(1);
  std::vector<long> index(ids.size() * d);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<size_t>(ids[i]) >= v) {
      throw DimensionError("embedding: id " + std::to_string(ids[i]) +
                           " outside vocabulary of " + std::to_string(v));
    }
    for (size_t j = 0; j < d; ++j) index[i * d + j] = static_cast<long>(ids[i] * d + j);
  }
  return gather(table, index, {ids.size(), d});
}

size_t conv1d_output_length(size_t frames, const Conv1dSpec& spec) {
  if (spec.kernel < 1 || spec.stride < 1) {
    throw ContractError("conv1d: kernel and stride must be >= 1");
  }
  const size_t padded = frames + 2 * spec.padding;
  if (padded < spec.kernel) return 0;
  return (padded - spec.kernel) / spec.stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dSpec& spec) {
  require_rank2(x, "conv1d");
  const size_t frames = x.dim(0), cin = x.dim(1);
  const size_t out_len = conv1d_output_length(frames, spec);
  if (out_len == 0) {
    throw InputTooShortError("conv1d: " + std::to_string(frames) +
                             " frames too short for kernel " + std::to_string(spec.kernel) +
                             " with padding " + std::to_string(spec.padding));
  }
  const size_t k = spec.kernel;
  size_t cout = 0;
  if (spec.depthwise) {
    if (weight.rank() != 2 || weight.dim(0) != k || weight.dim(1) != cin) {
      throw DimensionError("conv1d: depthwise weight " + shape_str(weight.shape()) +
                           " does not match kernel " + std::to_string(k) + " x " + std::to_string(cin));
    }
    cout = cin;
  } else {
    if (weight.rank() != 3 || weight.dim(0) != k || weight.dim(1) != cin) {
      throw DimensionError("conv1d: weight " + shape_str(weight.shape()) +
                           " does not match kernel " + std::to_string(k) + " x " + std::to_string(cin));
    }
    cout = weight.dim(2);
  }
  if (bias.defined() && bias.size() != cout) {
    throw DimensionError("conv1d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  }
  const auto xs = x.data(), ws = weight.data();
  std::vector<double> out(out_len * cout, 0.0);
  for (size_t t = 0; t < out_len; ++t) {
    double* orow = &out[t * cout];
    if (bias.defined()) std::copy_n(bias.data().data(), cout, orow);
    for (size_t kk = 0; kk < k; ++kk) {
      const long src = static_cast<long>(t * spec.stride + kk) - static_cast<long>(spec.padding);
      if (src < 0 || src >= static_cast<long>(frames)) continue;
      const double* xrow = &xs[static_cast<size_t>(src) * cin];
      if (spec.depthwise) {
        const double* wrow = &ws[kk * cin];
        for (size_t c = 0; c < cin; ++c) orow[c] += xrow[c] * wrow[c];
      } else {
        for (size_t c = 0; c < cin; ++c) {
          const double xv = xrow[c];
          if (xv == 0.0) continue;
          const double* wrow = &ws[(kk * cin + c) * cout];
          for (size_t o = 0; o < cout; ++o) orow[o] += xv * wrow[o];
        }
      }
    }
  }
  return make_result(
      {out_len, cout}, std::move(out), {x, weight, bias},
      [x, weight, bias, spec, frames, cin, cout, out_len](const detail::Node& self) {
        const auto xs = x.data(), ws = weight.data();
        auto* gx = grad_of(x);
        auto* gw = grad_of(weight);
        auto* gb = grad_of(bias);
        const size_t k = spec.kernel;
        for (size_t t = 0; t < out_len; ++t) {
          const double* dy = &self.grad[t * cout];
          if (gb) for (size_t o = 0; o < cout; ++o) (*gb)[o] += dy[o];
          for (size_t kk = 0; kk < k; ++kk) {
            const long src = static_cast<long>(t * spec.stride + kk) - static_cast<long>(spec.padding);
            if (src < 0 || src >= static_cast<long>(frames)) continue;
            const size_t s = static_cast<size_t>(src);
            if (spec.depthwise) {
              for (size_t c = 0; c < cin; ++c) {
                if (gx) (*gx)[s * cin + c] += dy[c] * ws[kk * cin + c];
                if (gw) (*gw)[kk * cin + c] += dy[c] * xs[s * cin + c];
              }
            } else {
              for (size_t c = 0; c < cin; ++c) {
                const size_t wbase = (kk * cin + c) * cout;
                if (gx) {
                  double acc = 0.0;
                  for (size_t o = 0; o < cout; ++o) acc += dy[o] * ws[wbase + o];
                  (*gx)[s * cin + c] += acc;
                }
                if (gw) {
                  const double xv = xs[s * cin + c];
                  if (xv == 0.0) continue;
                  for (size_t o = 0; o < cout; ++o) (*gw)[wbase + o] += dy[o] * xv;
                }
              }
            }
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, RngStream& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw ContractError("dropout: probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * mask[i];
  return make_result(x.shape(), std::move(out), {x},
                     [x, mask = std::move(mask)](const detail::Node& self) {
                       if (auto* g = grad_of(x))
                         for (size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * mask[i];
                     });
}

}  // namespace sttk
